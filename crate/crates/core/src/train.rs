//! Per-pair loss graphs and the epoch loop: T reparameterized samples per
//! pair, Adam updates, validation-based model selection and resumable state.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::corpus::TrainingPair;
use crate::lang::{TokenId, Vocab};
use crate::net::{Checkpoint, Dropout, Graph, ModelParameters, NamedArray, NetError, Tape, Tensor, Var};
use crate::objective::{
    bms_loss, cvae_loss, distance_on_tape, ds_bms_loss, loss_on_tape, optimize_step, AdamConfig, AdamState, DistanceMode, LossBreakdown,
    ObjectiveError, ObjectiveKind, SamplerConfig,
};
use crate::rng::{self, Rng};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFinite { epoch: usize, step: u64 },
    #[error("invalid training config: {0}")]
    Config(String),
}

impl TrainError {
    pub fn is_numeric(&self) -> bool {
        matches!(self, TrainError::NonFinite { .. } | TrainError::Objective(ObjectiveError::NaN(_)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub objective: ObjectiveKind,
    pub sampler: SamplerConfig,
    pub adam: AdamConfig,
    pub epochs: usize,
    pub batch_size: usize,
    /// Every `val_stride`-th training pair is held out for model selection;
    /// 0 trains on all pairs and selects on training loss.
    pub val_stride: usize,
    /// Linear KL warm-up over this many optimizer steps; 0 disables it.
    pub kl_warmup_steps: u64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            objective: ObjectiveKind::DsBms,
            sampler: SamplerConfig::default(),
            adam: AdamConfig::default(),
            epochs: 20,
            batch_size: 1,
            val_stride: 10,
            kl_warmup_steps: 0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        self.sampler.validate(self.objective)?;
        if self.epochs == 0 || self.epochs > 20 {
            return Err(TrainError::Config(format!("epochs must lie in 1..=20, got {}", self.epochs)));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be ≥ 1".into()));
        }
        if self.val_stride == 1 {
            return Err(TrainError::Config("val_stride must be 0 or ≥ 2".into()));
        }
        Ok(())
    }
}

/// Model-ready token sequences of one pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub x: Vec<TokenId>,
    pub y: Vec<TokenId>,
}

impl Example {
    pub fn from_pair(vocab: &Vocab, pair: &TrainingPair) -> Option<Example> {
        Some(Example { x: pair.x.encoder_tokens(vocab), y: pair.y.to_sequence(vocab)? })
    }
}

/// Splits off every `stride`-th example (1-based) for validation; stride 0
/// keeps everything for training.
pub fn split_validation(examples: Vec<Example>, stride: usize) -> (Vec<Example>, Vec<Example>) {
    if stride == 0 {
        return (examples, Vec::new());
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (i, e) in examples.into_iter().enumerate() {
        if (i + 1) % stride == 0 {
            val.push(e);
        } else {
            train.push(e);
        }
    }
    (train, val)
}

/// Standard-normal noise for `t` latent draws.
pub fn draw_eps(rng: &mut Rng, t: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..t).map(|_| (0..dim).map(|_| StandardNormal.sample(rng)).collect()).collect()
}

/// Builds the objective for one pair on `tape`.
#[allow(clippy::too_many_arguments)]
pub fn pair_loss(
    graph: &Graph,
    tape: &mut Tape,
    ex: &Example,
    objective: ObjectiveKind,
    sampler: &SamplerConfig,
    eps: &[Vec<f64>],
    kl_weight: f64,
    drop: &mut Dropout,
) -> Result<(Var, LossBreakdown), TrainError> {
    let vocab_size = graph.params.config.vocab_size;
    let enc = graph.encode(tape, &ex.x, drop)?;
    let q = graph.posterior(tape, enc.v, &ex.y, drop)?;
    let kl = graph.kl(tape, &q);
    let kl_w = tape.scale(kl, kl_weight);
    let mut nlls = Vec::with_capacity(eps.len());
    let mut outputs = Vec::with_capacity(eps.len());
    for e in eps {
        let z = graph.reparameterize(tape, &q, e);
        let steps = graph.teacher(tape, &enc, z, &ex.y, TokenId::GO, drop)?;
        nlls.push(graph.nll(tape, &steps, &ex.y)?);
        outputs.push(steps.iter().map(|s| s.probs).collect::<Vec<_>>());
    }
    let mut dists = Vec::new();
    if objective == ObjectiveKind::DsBms {
        for i in 0..outputs.len() {
            for j in i + 1..outputs.len() {
                dists.push(match sampler.distance {
                    DistanceMode::Soft => distance_on_tape(tape, &outputs[i], &outputs[j], vocab_size),
                    DistanceMode::Hard => {
                        let (a, b) = (hard(tape, &outputs[i]), hard(tape, &outputs[j]));
                        distance_on_tape(tape, &a, &b, vocab_size)
                    }
                });
            }
        }
    }
    let total = loss_on_tape(tape, objective, &nlls, kl_w, &dists, sampler);
    let nll_values: Vec<f64> = nlls.iter().map(|&v| tape.scalar(v)).collect();
    let kl_value = tape.scalar(kl_w);
    let d_values: Vec<f64> = dists.iter().map(|&v| tape.scalar(v)).collect();
    let breakdown = match objective {
        ObjectiveKind::Cvae => cvae_loss(&nll_values, kl_value)?,
        ObjectiveKind::Bms => bms_loss(&nll_values, kl_value)?,
        ObjectiveKind::DsBms => ds_bms_loss(&nll_values, kl_value, &d_values, sampler)?,
    };
    Ok((total, breakdown))
}

/// One-hot constants at each step's argmax.
fn hard(tape: &mut Tape, steps: &[Var]) -> Vec<Var> {
    steps
        .iter()
        .map(|&s| {
            let p = &tape.value(s).data;
            let k = crate::net::argmax(p);
            let mut h = vec![0.0; p.len()];
            h[k] = 1.0;
            tape.constant(Tensor::vector(h))
        })
        .collect()
}

/// Loss and gradients for one pair, with noise and dropout drawn from `rng`.
pub fn pair_gradients(
    params: &ModelParameters,
    ex: &Example,
    cfg: &TrainConfig,
    kl_weight: f64,
    rng: &mut Rng,
) -> Result<(crate::net::Gradients, LossBreakdown), TrainError> {
    let graph = Graph::new(params);
    let mut tape = graph.tape();
    let eps = draw_eps(rng, cfg.sampler.t_train, params.config.latent_dim);
    let mut drop = Dropout::train(params.config.dropout, rng);
    let (loss, breakdown) = pair_loss(&graph, &mut tape, ex, cfg.objective, &cfg.sampler, &eps, kl_weight, &mut drop)?;
    Ok((tape.backward(loss)?, breakdown))
}

/// Mean objective over `val` in eval mode with fixed noise streams.
pub fn validation_loss(params: &ModelParameters, val: &[Example], cfg: &TrainConfig) -> Result<f64, TrainError> {
    if val.is_empty() {
        return Ok(0.0);
    }
    let graph = Graph::new(params);
    let mut total = 0.0;
    for (i, ex) in val.iter().enumerate() {
        let mut r = rng::derive(cfg.seed, &[0x7a1, i as u64]);
        let eps = draw_eps(&mut r, cfg.sampler.t_train, params.config.latent_dim);
        let mut tape = graph.tape();
        let (_, b) = pair_loss(&graph, &mut tape, ex, cfg.objective, &cfg.sampler, &eps, 1.0, &mut Dropout::eval())?;
        total += b.total;
    }
    Ok(total / val.len() as f64)
}

/// One log record per training pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub event: String,
    pub epoch: usize,
    pub step: u64,
    pub pair: usize,
    #[serde(flatten)]
    pub loss: LossBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub event: String,
    pub epoch: usize,
    pub steps: u64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub best_epoch: usize,
}

/// Everything needed to continue training exactly where it stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: ModelParameters,
    pub adam: AdamState,
    /// Completed epochs.
    pub epoch: usize,
    pub step: u64,
    pub best_val: f64,
    pub best_epoch: usize,
    pub best_params: ModelParameters,
}

impl TrainState {
    pub fn new(params: ModelParameters) -> TrainState {
        TrainState {
            adam: AdamState::new(&params),
            best_params: params.clone(),
            params,
            epoch: 0,
            step: 0,
            best_val: f64::INFINITY,
            best_epoch: 0,
        }
    }

    /// Resumable checkpoint: current parameters, optimizer moments under
    /// `adam/m/` and `adam/v/`, best parameters under `best/`.
    pub fn to_checkpoint(&self, extra: serde_json::Value) -> Checkpoint {
        let mut ck = Checkpoint::from_params(
            &self.params,
            json!({
                "train_state": {
                    "epoch": self.epoch,
                    "step": self.step,
                    "adam_t": self.adam.t,
                    "best_val": if self.best_val.is_finite() { json!(self.best_val) } else { json!(null) },
                    "best_epoch": self.best_epoch,
                },
                "run": extra,
            }),
        );
        for (i, name) in self.params.names.iter().enumerate() {
            ck.arrays.push(NamedArray::from_tensor(format!("adam/m/{name}"), &self.adam.m[i]));
            ck.arrays.push(NamedArray::from_tensor(format!("adam/v/{name}"), &self.adam.v[i]));
            ck.arrays.push(NamedArray::from_tensor(format!("best/{name}"), &self.best_params.tensors[i]));
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<TrainState, NetError> {
        let params = ck.params()?;
        let ts = ck.config.get("train_state").ok_or_else(|| NetError::Checkpoint("no train_state block".into()))?;
        let field = |k: &str| ts.get(k).and_then(|v| v.as_u64()).ok_or_else(|| NetError::Checkpoint(format!("train_state.{k} missing")));
        let array = |name: String| -> Result<Tensor, NetError> {
            ck.array(&name).ok_or_else(|| NetError::Checkpoint(format!("missing array `{name}`")))?.to_tensor()
        };
        let mut adam = AdamState::new(&params);
        adam.t = field("adam_t")?;
        let mut best_params = params.clone();
        for (i, name) in params.names.iter().enumerate() {
            adam.m[i] = array(format!("adam/m/{name}"))?;
            adam.v[i] = array(format!("adam/v/{name}"))?;
            best_params.tensors[i] = array(format!("best/{name}"))?;
        }
        Ok(TrainState {
            epoch: field("epoch")? as usize,
            step: field("step")?,
            best_val: ts.get("best_val").and_then(|v| v.as_f64()).unwrap_or(f64::INFINITY),
            best_epoch: field("best_epoch")? as usize,
            params,
            adam,
            best_params,
        })
    }
}

fn kl_weight(cfg: &TrainConfig, step: u64) -> f64 {
    if cfg.kl_warmup_steps == 0 {
        1.0
    } else {
        ((step + 1) as f64 / cfg.kl_warmup_steps as f64).min(1.0)
    }
}

/// Runs one epoch over `train` and updates model selection against `val`.
/// The pair order and all noise derive from `(seed, epoch)`, so resuming from
/// a saved state replays the uninterrupted run exactly.
pub fn run_epoch(
    state: &mut TrainState,
    train: &[Example],
    val: &[Example],
    cfg: &TrainConfig,
    log: &mut dyn FnMut(&StepRecord),
) -> Result<EpochRecord, TrainError> {
    let epoch = state.epoch + 1;
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut rng::derive(cfg.seed, &[0xe0, epoch as u64]));
    let mut sum = 0.0;
    for batch in order.chunks(cfg.batch_size) {
        let mut acc: Option<crate::net::Gradients> = None;
        let w = kl_weight(cfg, state.step);
        for &i in batch {
            let mut r = rng::derive(cfg.seed, &[0xd0, epoch as u64, i as u64]);
            let (g, loss) = pair_gradients(&state.params, &train[i], cfg, w, &mut r)?;
            if !loss.total.is_finite() {
                return Err(TrainError::NonFinite { epoch, step: state.step });
            }
            sum += loss.total;
            log(&StepRecord { event: "step".into(), epoch, step: state.step, pair: i, loss });
            match &mut acc {
                Some(a) => a.add_assign(&g),
                None => acc = Some(g),
            }
        }
        let mut g = acc.expect("non-empty batch");
        g.scale(1.0 / batch.len() as f64);
        optimize_step(&mut state.params, &g, &mut state.adam, &cfg.adam)?;
        state.step += 1;
    }
    let val_loss = if val.is_empty() { sum / train.len().max(1) as f64 } else { validation_loss(&state.params, val, cfg)? };
    if !val_loss.is_finite() {
        return Err(TrainError::NonFinite { epoch, step: state.step });
    }
    if val_loss < state.best_val {
        state.best_val = val_loss;
        state.best_epoch = epoch;
        state.best_params = state.params.clone();
    }
    state.epoch = epoch;
    Ok(EpochRecord {
        event: "epoch".into(),
        epoch,
        steps: state.step,
        train_loss: sum / train.len().max(1) as f64,
        val_loss,
        best_epoch: state.best_epoch,
    })
}

/// Smallest gradient magnitude used as the denominator of the relative error;
/// below it, central differences are dominated by rounding.
pub const GRADCHECK_FLOOR: f64 = 1e-5;

/// Largest relative error between analytic gradients of the full per-pair
/// objective (three samples, fixed noise and dropout masks) and central
/// differences with step `h`, over every parameter.
pub fn gradient_check(mut params: ModelParameters, ex: &Example, objective: ObjectiveKind, seed: u64, h: f64) -> f64 {
    let sampler = SamplerConfig { t_train: 3, ..Default::default() };
    let latent = params.config.latent_dim;
    let rate = params.config.dropout;
    let eval = |p: &ModelParameters, grads: bool| -> (f64, Option<crate::net::Gradients>) {
        let graph = Graph::new(p);
        let mut tape = graph.tape();
        let mut r = rng::derive(seed, &[0x9c]);
        let eps = draw_eps(&mut r, sampler.t_train, latent);
        let mut drop = Dropout::train(rate, &mut r);
        let (loss, _) = pair_loss(&graph, &mut tape, ex, objective, &sampler, &eps, 1.0, &mut drop).expect("valid example");
        (tape.scalar(loss), grads.then(|| tape.backward(loss).expect("loss on tape")))
    };
    let grads = eval(&params, true).1.unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..params.tensors.len() {
        for k in 0..params.tensors[i].len() {
            let orig = params.tensors[i].data[k];
            params.tensors[i].data[k] = orig + h;
            let up = eval(&params, false).0;
            params.tensors[i].data[k] = orig - h;
            let down = eval(&params, false).0;
            params.tensors[i].data[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads.grads[i].data[k];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRADCHECK_FLOOR);
            worst = worst.max(rel);
        }
    }
    worst
}
