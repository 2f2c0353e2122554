//! Loss, Adamax, dropout masks, early stopping and the epoch loop.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::TrainConfig;
use crate::corpus::{Dataset, Sentence, NUM_CLASSES};
use crate::diffmath::{Matrix, Parameters};
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::metrics::{confusion, macro_f1, ConfusionMatrix};
use crate::model::{argmax, Model, Pass};

/// Probabilities are clipped here before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

const UPDATE_FLOOR: f64 = 1e-8;

/// `−ln(max(p[gold], 1e−12))`.
pub fn cross_entropy(probs: &[f64], gold: usize) -> Result<f64> {
    if gold >= NUM_CLASSES || gold >= probs.len() {
        return Err(Error::ClassIndex(gold));
    }
    Ok(-probs[gold].max(PROB_FLOOR).ln())
}

/// Inverted-dropout mask: each entry is 0 with probability `rate`, else
/// `1 / (1 − rate)`.
pub fn dropout_mask<R: RngCore + ?Sized>(len: usize, rate: f64, rng: &mut R) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate must be in [0, 1), got {rate}")));
    }
    if rate == 0.0 {
        return Ok(vec![1.0; len]);
    }
    let keep = 1.0 / (1.0 - rate);
    Ok((0..len)
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect())
}

/// Fisher-Yates over `u64` draws, so 32- and 64-bit targets (wasm and
/// native) produce the same order from the same seed.
pub fn shuffle<T, R: Rng + ?Sized>(items: &mut [T], rng: &mut R) {
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i as u64) as usize;
        items.swap(i, j);
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamaxConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl Default for AdamaxConfig {
    fn default() -> Self {
        AdamaxConfig {
            lr: 0.002,
            beta1: 0.9,
            beta2: 0.999,
        }
    }
}

impl From<&TrainConfig> for AdamaxConfig {
    fn from(c: &TrainConfig) -> Self {
        AdamaxConfig {
            lr: c.lr,
            beta1: c.beta1,
            beta2: c.beta2,
        }
    }
}

/// First moment `m` and infinity-norm accumulator `u` per tensor entry.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamaxState {
    pub m: Vec<Matrix>,
    pub u: Vec<Matrix>,
    pub t: u64,
}

impl AdamaxState {
    pub fn new<P: Parameters>(params: &P) -> Self {
        let zeros: Vec<Matrix> = params
            .tensors()
            .iter()
            .map(|(_, t)| Matrix::zeros(t.rows(), t.cols()))
            .collect();
        AdamaxState {
            m: zeros.clone(),
            u: zeros,
            t: 0,
        }
    }
}

/// One Adamax update:
/// `m ← β₁m + (1−β₁)g`, `u ← max(β₂u, |g|)`, `θ ← θ − lr/(1−β₁ᵗ) · m/u`.
pub fn adamax_step<P: Parameters>(
    params: &mut P,
    grads: &P,
    state: &mut AdamaxState,
    cfg: &AdamaxConfig,
) -> Result<()> {
    let grads = grads.tensors();
    for (name, g) in &grads {
        if !g.is_finite() {
            return Err(Error::Numeric(format!("gradient of {name} is not finite")));
        }
    }
    let mut tensors = params.tensors_mut();
    if tensors.len() != grads.len() || state.m.len() != grads.len() {
        return Err(Error::dim("adamax_step", tensors.len(), grads.len()));
    }
    state.t += 1;
    let step = cfg.lr / (1.0 - cfg.beta1.powi(state.t as i32));
    for (k, ((name, theta), (_, g))) in tensors.iter_mut().zip(&grads).enumerate() {
        if theta.shape() != g.shape() || state.m[k].shape() != g.shape() {
            return Err(Error::dim("adamax_step", *name, format!("{:?}", g.shape())));
        }
        let m = state.m[k].data_mut();
        let u = state.u[k].data_mut();
        for (j, (th, &gj)) in theta.data_mut().iter_mut().zip(g.data()).enumerate() {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
            u[j] = (cfg.beta2 * u[j]).max(gj.abs());
            *th -= step * m[j] / u[j].max(UPDATE_FLOOR);
        }
    }
    Ok(())
}

/// Patience counter over a loss that should decrease.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<f64>,
    best_epoch: usize,
    stale: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Verdict {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: None,
            best_epoch: 0,
            stale: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, loss: f64) -> Verdict {
        let improved = self.best.is_none_or(|b| loss < b);
        if improved {
            self.best = Some(loss);
            self.best_epoch = epoch;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        Verdict {
            improved,
            stop: self.stale >= self.patience,
        }
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best.map(|b| (self.best_epoch, b))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: f64,
    pub dev_f1: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were restored.
    pub best_epoch: usize,
}

impl History {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,dev_loss,dev_f1\n");
        for r in &self.epochs {
            out.push_str(&format!("{},{},{},{}\n", r.epoch, r.train_loss, r.dev_loss, r.dev_f1));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DevScore {
    pub loss: f64,
    pub macro_f1: f64,
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub loss: f64,
    pub confusion: ConfusionMatrix,
    pub predictions: Vec<usize>,
}

fn gold(s: &Sentence) -> Result<usize> {
    s.label
        .map(|l| l.index())
        .ok_or_else(|| Error::Config(format!("sentence {:?} has no label", s.id)))
}

/// Mean loss, confusion matrix and predictions over a labelled dataset;
/// sentences are processed in order.
pub fn evaluate(model: &Model, data: &Dataset, vocab: &EmbeddingTable) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::Empty { op: "evaluate" });
    }
    let mut total = 0.0;
    let mut preds = Vec::with_capacity(data.len());
    let mut golds = Vec::with_capacity(data.len());
    for s in &data.sentences {
        let g = gold(s)?;
        let probs = model.forward(s, vocab, Pass::Inference)?;
        total += cross_entropy(&probs, g)?;
        preds.push(argmax(&probs));
        golds.push(g);
    }
    Ok(Evaluation {
        loss: total / data.len() as f64,
        confusion: confusion(&preds, &golds)?,
        predictions: preds,
    })
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub history: History,
}

/// The epoch loop with a pluggable dev monitor. Returns the parameters of
/// the epoch with the lowest monitored loss.
pub fn fit<F>(
    train: &Dataset,
    cfg: &TrainConfig,
    vocab: &EmbeddingTable,
    mut model: Model,
    mut monitor: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&Model, usize) -> Result<DevScore>,
{
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Empty { op: "train" });
    }
    let golds = train.sentences.iter().map(gold).collect::<Result<Vec<_>>>()?;
    let opt = AdamaxConfig::from(cfg);
    let mut state = AdamaxState::new(&model.params);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut history = History::default();
    let mut best = model.params.clone();
    let mut grads = model.params.zeros_like();

    for epoch in 1..=cfg.epochs {
        shuffle(&mut order, &mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            for (_, t) in grads.tensors_mut() {
                t.fill(0.0);
            }
            let mut batch_loss = 0.0;
            for &i in batch {
                let pass = Pass::Train {
                    dropout: cfg.dropout,
                    rng: &mut dropout_rng,
                };
                let mut tape = crate::diffmath::GradTape::new();
                model.record(&train.sentences[i], vocab, pass, &mut tape)?;
                batch_loss += model.backward(&mut tape, golds[i], &mut grads)?;
            }
            if !batch_loss.is_finite() {
                return Err(Error::Numeric(format!("loss diverged at epoch {epoch}, batch {}", b + 1)));
            }
            grads.scale(1.0 / batch.len() as f64);
            adamax_step(&mut model.params, &grads, &mut state, &opt)
                .map_err(|e| Error::Numeric(format!("epoch {epoch}, batch {}: {e}", b + 1)))?;
            epoch_loss += batch_loss;
        }
        let dev = monitor(&model, epoch)?;
        if !dev.loss.is_finite() {
            return Err(Error::Numeric(format!("dev loss is {} at epoch {epoch}", dev.loss)));
        }
        let record = EpochRecord {
            epoch,
            train_loss: epoch_loss / train.len() as f64,
            dev_loss: dev.loss,
            dev_f1: dev.macro_f1,
        };
        log::info!(
            "epoch {epoch}: train_loss {:.4} dev_loss {:.4} dev_f1 {:.4}",
            record.train_loss,
            record.dev_loss,
            record.dev_f1
        );
        history.epochs.push(record);
        let verdict = stopper.observe(epoch, dev.loss);
        if verdict.improved {
            best.clone_from(&model.params);
            history.best_epoch = epoch;
        }
        if verdict.stop {
            log::info!("early stop after epoch {epoch}; best epoch {}", history.best_epoch);
            break;
        }
    }
    model.params = best;
    Ok(TrainOutcome { model, history })
}

/// Trains with dev-loss early stopping and best-checkpoint restoration.
pub fn train(
    train: &Dataset,
    dev: &Dataset,
    cfg: &TrainConfig,
    vocab: &EmbeddingTable,
    model: Model,
) -> Result<TrainOutcome> {
    if dev.is_empty() {
        return Err(Error::Empty { op: "train (dev set)" });
    }
    fit(train, cfg, vocab, model, |m, _| {
        let e = evaluate(m, dev, vocab)?;
        Ok(DevScore {
            loss: e.loss,
            macro_f1: macro_f1(&e.confusion),
        })
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub epochs: usize,
    pub batch_size: usize,
    pub best_epoch: usize,
    pub dev_loss: f64,
    pub dev_f1: f64,
}

/// Retrains from a fresh model for every (epochs, batch size) pair and
/// reports the restored checkpoint's dev scores.
pub fn sweep<F>(
    train_set: &Dataset,
    dev: &Dataset,
    base: &TrainConfig,
    vocab: &EmbeddingTable,
    epoch_grid: &[usize],
    batch_grid: &[usize],
    mut fresh_model: F,
) -> Result<Vec<SweepRow>>
where
    F: FnMut() -> Result<Model>,
{
    let mut rows = Vec::new();
    for &epochs in epoch_grid {
        for &batch_size in batch_grid {
            let cfg = TrainConfig {
                epochs,
                batch_size,
                ..base.clone()
            };
            let out = train(train_set, dev, &cfg, vocab, fresh_model()?)?;
            let e = evaluate(&out.model, dev, vocab)?;
            rows.push(SweepRow {
                epochs,
                batch_size,
                best_epoch: out.history.best_epoch,
                dev_loss: e.loss,
                dev_f1: macro_f1(&e.confusion),
            });
        }
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("epochs,batch_size,best_epoch,dev_loss,dev_f1\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.epochs, r.batch_size, r.best_epoch, r.dev_loss, r.dev_f1
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffmath::Parameters;

    #[test]
    fn shuffle_is_a_seeded_permutation() {
        let mut a: Vec<usize> = (0..50).collect();
        let mut b = a.clone();
        shuffle(&mut a, &mut ChaCha8Rng::seed_from_u64(3));
        shuffle(&mut b, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
        assert_ne!(a, (0..50).collect::<Vec<_>>());
        a.sort_unstable();
        assert_eq!(a, (0..50).collect::<Vec<_>>());
        let mut empty: [u8; 0] = [];
        shuffle(&mut empty, &mut ChaCha8Rng::seed_from_u64(3));
    }

    struct One(Matrix);

    impl Parameters for One {
        fn tensors(&self) -> Vec<(&'static str, &Matrix)> {
            vec![("theta", &self.0)]
        }
        fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Matrix)> {
            vec![("theta", &mut self.0)]
        }
    }

    #[test]
    fn cross_entropy_examples() {
        assert_eq!(cross_entropy(&[0.0, 1.0, 0.0], 1).unwrap(), 0.0);
        let u = [1.0 / 3.0; 3];
        assert!((cross_entropy(&u, 0).unwrap() - 3f64.ln()).abs() < 1e-15);
        let clipped = cross_entropy(&[1.0, 0.0, 0.0], 2).unwrap();
        assert!((clipped - 27.631021115928547).abs() < 1e-12);
        assert!(cross_entropy(&u, 3).is_err());
    }

    #[test]
    fn first_step_is_signed_lr() {
        let mut p = One(Matrix::from_vec(1, 4, vec![0.5, -1.0, 2.0, 0.0]).unwrap());
        let before = p.0.clone();
        let g = One(Matrix::from_vec(1, 4, vec![3.0, -0.01, 1e-6, -50.0]).unwrap());
        let mut st = AdamaxState::new(&p);
        let cfg = AdamaxConfig::default();
        adamax_step(&mut p, &g, &mut st, &cfg).unwrap();
        for j in 0..4 {
            let delta = p.0.data()[j] - before.data()[j];
            let expected = -cfg.lr * g.0.data()[j].signum();
            assert!((delta - expected).abs() < 1e-12, "{j}: {delta} vs {expected}");
        }
        assert_eq!(st.t, 1);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = One(Matrix::filled(2, 2, 0.7));
        let g = One(Matrix::zeros(2, 2));
        let mut st = AdamaxState::new(&p);
        adamax_step(&mut p, &g, &mut st, &AdamaxConfig::default()).unwrap();
        assert_eq!(p.0, Matrix::filled(2, 2, 0.7));
    }

    #[test]
    fn two_steps_match_hand_recursion() {
        let cfg = AdamaxConfig { lr: 0.01, beta1: 0.9, beta2: 0.999 };
        let mut p = One(Matrix::from_vec(1, 1, vec![1.0]).unwrap());
        let mut st = AdamaxState::new(&p);
        adamax_step(&mut p, &One(Matrix::from_vec(1, 1, vec![0.5]).unwrap()), &mut st, &cfg).unwrap();
        adamax_step(&mut p, &One(Matrix::from_vec(1, 1, vec![-0.2]).unwrap()), &mut st, &cfg).unwrap();
        // step 1: m = 0.05, u = 0.5, θ = 1 − 0.01/0.1 · 0.1 = 0.99
        // step 2: m = 0.045 − 0.02 = 0.025, u = max(0.4995, 0.2) = 0.4995,
        //         θ = 0.99 − 0.01/0.19 · 0.025/0.4995
        let expected = 0.99 - (0.01 / (1.0 - 0.81)) * (0.025 / 0.4995);
        assert!((p.0.data()[0] - expected).abs() < 1e-12);
        assert!((st.m[0].data()[0] - 0.025).abs() < 1e-15);
        assert!((st.u[0].data()[0] - 0.4995).abs() < 1e-15);
    }

    #[test]
    fn nan_gradient_names_tensor() {
        let mut p = One(Matrix::zeros(1, 1));
        let g = One(Matrix::from_vec(1, 1, vec![f64::NAN]).unwrap());
        let mut st = AdamaxState::new(&p);
        let err = adamax_step(&mut p, &g, &mut st, &AdamaxConfig::default()).unwrap_err();
        assert!(err.to_string().contains("theta"));
        assert!(err.is_numeric());
    }

    #[test]
    fn quadratic_loss_decreases() {
        // f(θ) = (θ − 3)², gradient 2(θ − 3)
        let cfg = AdamaxConfig { lr: 0.01, ..Default::default() };
        let mut p = One(Matrix::from_vec(1, 1, vec![0.0]).unwrap());
        let mut st = AdamaxState::new(&p);
        let f = |x: f64| (x - 3.0) * (x - 3.0);
        let mut prev = f(0.0);
        for _ in 0..50 {
            let x = p.0.data()[0];
            let g = One(Matrix::from_vec(1, 1, vec![2.0 * (x - 3.0)]).unwrap());
            adamax_step(&mut p, &g, &mut st, &cfg).unwrap();
            let now = f(p.0.data()[0]);
            assert!(now < prev);
            prev = now;
        }
    }

    #[test]
    fn dropout_masks() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(dropout_mask(5, 0.0, &mut rng).unwrap(), vec![1.0; 5]);
        assert!(dropout_mask(5, 1.0, &mut rng).is_err());
        let m = dropout_mask(100_000, 0.25, &mut rng).unwrap();
        let mean = m.iter().sum::<f64>() / m.len() as f64;
        assert!((mean - 1.0).abs() < 0.01, "{mean}");
        assert!(m.iter().all(|&v| v == 0.0 || (v - 4.0 / 3.0).abs() < 1e-15));
        let a = dropout_mask(64, 0.5, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = dropout_mask(64, 0.5, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn early_stopping_patience_one() {
        let mut es = EarlyStopping::new(1);
        assert_eq!(es.observe(1, 1.0), Verdict { improved: true, stop: false });
        assert_eq!(es.observe(2, 1.1), Verdict { improved: false, stop: true });
        assert_eq!(es.best(), Some((1, 1.0)));
    }

    #[test]
    fn early_stopping_resets_on_improvement() {
        let mut es = EarlyStopping::new(2);
        es.observe(1, 1.0);
        assert!(!es.observe(2, 1.2).stop);
        assert!(es.observe(3, 0.9).improved);
        assert!(!es.observe(4, 0.95).stop);
        assert!(es.observe(5, 0.95).stop);
        assert_eq!(es.best(), Some((3, 0.9)));
    }
}
