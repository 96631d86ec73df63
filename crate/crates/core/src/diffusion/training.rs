use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::adam::{adam_step, AdamConfig, AdamState};
use super::network::DenoiserParams;
use super::schedule::{q_sample, standard_normal, NoiseSchedule};
use super::Conditioning;
use crate::error::{Error, Result};
use crate::motion::random_drop_mask_with;

/// Origin of a training sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DataSource {
    /// Detected 2D motion with a valid global trajectory.
    VideoGlobal,
    /// Projected 3D motion whose root is not trusted; only the local pose is
    /// supervised.
    ReprojectedLocal,
}

impl DataSource {
    pub fn name(self) -> &'static str {
        match self {
            DataSource::VideoGlobal => "video_global",
            DataSource::ReprojectedLocal => "reprojected_local",
        }
    }
}

/// One packed, canvas-unit training sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingItem {
    /// Packed layout (hip slots carry the root), `T x K x 2`.
    pub target: Vec<f64>,
    pub source: DataSource,
    pub cond: Conditioning,
    /// `T x K`.
    pub visibility: Vec<bool>,
    pub hips: (usize, usize),
}

impl TrainingItem {
    pub fn new(
        target: Vec<f64>,
        source: DataSource,
        cond: Conditioning,
        visibility: Vec<bool>,
        hips: (usize, usize),
    ) -> Result<Self> {
        let (t, k) = (cond.frames, cond.joints);
        if target.len() != t * k * 2 || visibility.len() != t * k {
            return Err(Error::shape("training item does not match its conditioning"));
        }
        if hips.0 >= k || hips.1 >= k || hips.0 == hips.1 {
            return Err(Error::invalid("hip indices out of range"));
        }
        if target.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite training target".into()));
        }
        Ok(Self {
            target,
            source,
            cond,
            visibility,
            hips,
        })
    }

    /// Per-keypoint loss mask: visibility, with hips removed for
    /// reprojected items.
    pub fn loss_mask(&self) -> Vec<bool> {
        let k = self.cond.joints;
        self.visibility
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let j = i % k;
                let hip = j == self.hips.0 || j == self.hips.1;
                v && !(self.source == DataSource::ReprojectedLocal && hip)
            })
            .collect()
    }
}

/// Items in a batch share no state; their losses are averaged.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingBatch {
    pub items: Vec<TrainingItem>,
}

/// Views of one multi-view training sample. View 0 is the reference.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiViewItem {
    pub views: Vec<TrainingItem>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    pub l1: f64,
    pub line: f64,
    /// Gradient w.r.t. the flat weights.
    pub grad: Vec<f64>,
    /// Gradient w.r.t. each item's (or view's) prediction.
    pub output_grads: Vec<Vec<f64>>,
    pub steps: Vec<usize>,
}

/// Recomposes a packed sample to global coordinates (canvas units, centre 0).
pub(crate) fn recompose_flat(packed: &[f64], joints: usize, hips: (usize, usize)) -> Vec<f64> {
    let mut out = packed.to_vec();
    for (f_in, f_out) in packed.chunks_exact(2 * joints).zip(out.chunks_exact_mut(2 * joints)) {
        let mid = [
            0.5 * (f_in[2 * hips.0] + f_in[2 * hips.1]),
            0.5 * (f_in[2 * hips.0 + 1] + f_in[2 * hips.1 + 1]),
        ];
        for j in 0..joints {
            if j != hips.0 && j != hips.1 {
                f_out[2 * j] += mid[0];
                f_out[2 * j + 1] += mid[1];
            }
        }
    }
    out
}

/// Transposed Jacobian of [`recompose_flat`].
pub(crate) fn recompose_flat_backward(d_global: &[f64], joints: usize, hips: (usize, usize)) -> Vec<f64> {
    let mut out = d_global.to_vec();
    for (g, o) in d_global.chunks_exact(2 * joints).zip(out.chunks_exact_mut(2 * joints)) {
        let mut acc = [0.0; 2];
        for j in 0..joints {
            if j != hips.0 && j != hips.1 {
                acc[0] += g[2 * j];
                acc[1] += g[2 * j + 1];
            }
        }
        for h in [hips.0, hips.1] {
            o[2 * h] += 0.5 * acc[0];
            o[2 * h + 1] += 0.5 * acc[1];
        }
    }
    out
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Loss terms for one prediction: `(l1, line, d loss / d pred)`.
fn item_loss(item: &TrainingItem, pred: &[f64], line_weight: f64) -> (f64, f64, Vec<f64>) {
    let (t_n, k) = (item.cond.frames, item.cond.joints);
    let count = (t_n * k * 2) as f64;
    let mask = item.loss_mask();
    let mut l1 = 0.0;
    let mut grad = vec![0.0; pred.len()];
    for i in 0..pred.len() {
        if mask[i / 2] {
            let r = pred[i] - item.target[i];
            l1 += r.abs();
            grad[i] = sign(r) / count;
        }
    }
    l1 /= count;
    let mut line = 0.0;
    if item.source == DataSource::VideoGlobal && line_weight != 0.0 {
        let global = recompose_flat(pred, k, item.hips);
        let norm = (t_n * k) as f64;
        let mut d_global = vec![0.0; pred.len()];
        for (i, l) in item.cond.lines.iter().enumerate() {
            if !item.visibility[i] || (l[0] == 0.0 && l[1] == 0.0) {
                continue;
            }
            let r = l[0] * global[2 * i] + l[1] * global[2 * i + 1] + l[2];
            line += r.abs();
            let s = sign(r) / norm;
            d_global[2 * i] = s * l[0];
            d_global[2 * i + 1] = s * l[1];
        }
        line /= norm;
        let back = recompose_flat_backward(&d_global, k, item.hips);
        for (g, b) in grad.iter_mut().zip(back) {
            *g += line_weight * b;
        }
    }
    (l1, line, grad)
}

fn check_item(params: &DenoiserParams, item: &TrainingItem) -> Result<()> {
    if item.cond.joints != params.dims().joints {
        return Err(Error::shape("training item joint count differs from the model"));
    }
    Ok(())
}

/// Loss and gradients for given per-item steps and noise.
pub fn training_loss_with_noise(
    params: &DenoiserParams,
    batch: &TrainingBatch,
    sched: &NoiseSchedule,
    draws: &[(usize, Vec<f64>)],
    line_weight: f64,
) -> Result<LossOutput> {
    if batch.items.is_empty() {
        return Err(Error::invalid("empty training batch"));
    }
    if draws.len() != batch.items.len() {
        return Err(Error::shape("one noise draw per item required"));
    }
    let nb = batch.items.len() as f64;
    let mut out = LossOutput {
        loss: 0.0,
        l1: 0.0,
        line: 0.0,
        grad: vec![0.0; params.len()],
        output_grads: Vec::with_capacity(batch.items.len()),
        steps: Vec::with_capacity(batch.items.len()),
    };
    for (item, (n, eps)) in batch.items.iter().zip(draws) {
        check_item(params, item)?;
        let xn = q_sample(&item.target, *n, eps, sched)?;
        let (pred, cache) = params.forward(&xn, *n, &item.cond)?;
        let (l1, line, mut dy) = item_loss(item, &pred, line_weight);
        dy.iter_mut().for_each(|g| *g /= nb);
        let (g, _) = params.backward(&cache, &dy)?;
        for (a, b) in out.grad.iter_mut().zip(&g) {
            *a += b;
        }
        out.l1 += l1 / nb;
        out.line += line / nb;
        out.output_grads.push(dy);
        out.steps.push(*n);
    }
    out.loss = out.l1 + line_weight * out.line;
    Ok(out)
}

/// Draws `n ~ U[1, N]` and Gaussian noise per item, then evaluates the
/// masked L1 loss plus the weighted line term on global items.
pub fn training_loss<R: Rng + ?Sized>(
    params: &DenoiserParams,
    batch: &TrainingBatch,
    sched: &NoiseSchedule,
    rng: &mut R,
    line_weight: f64,
) -> Result<LossOutput> {
    let draws: Vec<(usize, Vec<f64>)> = batch
        .items
        .iter()
        .map(|it| {
            let n = rng.random_range(1..=sched.steps());
            (n, standard_normal(rng, it.target.len()))
        })
        .collect();
    training_loss_with_noise(params, batch, sched, &draws, line_weight)
}

/// Multi-view counterpart: all views of an item share one step `n`.
pub fn multiview_training_loss_with_noise(
    params: &DenoiserParams,
    items: &[MultiViewItem],
    sched: &NoiseSchedule,
    draws: &[(usize, Vec<Vec<f64>>)],
    line_weight: f64,
) -> Result<LossOutput> {
    if items.is_empty() {
        return Err(Error::invalid("empty training batch"));
    }
    if draws.len() != items.len() {
        return Err(Error::shape("one noise draw per item required"));
    }
    let nb = items.len() as f64;
    let mut out = LossOutput {
        loss: 0.0,
        l1: 0.0,
        line: 0.0,
        grad: vec![0.0; params.len()],
        output_grads: Vec::new(),
        steps: Vec::with_capacity(items.len()),
    };
    for (item, (n, eps)) in items.iter().zip(draws) {
        if item.views.is_empty() || eps.len() != item.views.len() {
            return Err(Error::shape("multi-view item needs one noise vector per view"));
        }
        let nv = item.views.len() as f64;
        let mut xs = Vec::with_capacity(item.views.len());
        for (view, e) in item.views.iter().zip(eps) {
            check_item(params, view)?;
            xs.push(q_sample(&view.target, *n, e, sched)?);
        }
        let conds: Vec<Conditioning> = item.views.iter().map(|v| v.cond.clone()).collect();
        let (preds, cache) = params.forward_multiview(&xs, *n, &conds)?;
        let mut dys = Vec::with_capacity(preds.len());
        for (view, pred) in item.views.iter().zip(&preds) {
            let (l1, line, mut dy) = item_loss(view, pred, line_weight);
            dy.iter_mut().for_each(|g| *g /= nb * nv);
            out.l1 += l1 / (nb * nv);
            out.line += line / (nb * nv);
            dys.push(dy);
        }
        let (g, _) = params.backward_multiview(&cache, &dys)?;
        for (a, b) in out.grad.iter_mut().zip(&g) {
            *a += b;
        }
        out.output_grads.extend(dys);
        out.steps.push(*n);
    }
    out.loss = out.l1 + line_weight * out.line;
    Ok(out)
}

pub fn multiview_training_loss<R: Rng + ?Sized>(
    params: &DenoiserParams,
    items: &[MultiViewItem],
    sched: &NoiseSchedule,
    rng: &mut R,
    line_weight: f64,
) -> Result<LossOutput> {
    let draws: Vec<(usize, Vec<Vec<f64>>)> = items
        .iter()
        .map(|it| {
            let n = rng.random_range(1..=sched.steps());
            let eps = it.views.iter().map(|v| standard_normal(rng, v.target.len())).collect();
            (n, eps)
        })
        .collect();
    multiview_training_loss_with_noise(params, items, sched, &draws, line_weight)
}

/// Optimizer settings for [`train`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub line_weight: f64,
    /// Probability of drawing a global item when both sources are present.
    pub global_fraction: f64,
    /// Fraction of visible keypoints hidden from the loss in each sampled
    /// item.
    pub drop_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 16,
            adam: AdamConfig::with_lr(1e-3),
            line_weight: 0.1,
            global_fraction: 2.0 / 3.0,
            drop_rate: 0.0,
            seed: 0,
        }
    }
}

/// Resumable optimizer progress.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: DenoiserParams,
    pub adam: AdamState,
    pub step: usize,
    pub losses: Vec<f64>,
}

impl TrainState {
    pub fn new(params: DenoiserParams) -> Self {
        let adam = AdamState::new(params.len());
        Self {
            params,
            adam,
            step: 0,
            losses: Vec::new(),
        }
    }
}

/// Per-step generator so a resumed run draws exactly what an uninterrupted
/// run would have.
pub fn step_rng(seed: u64, step: usize) -> ChaCha8Rng {
    let mut z = seed ^ (step as u64).wrapping_mul(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    ChaCha8Rng::seed_from_u64(z ^ (z >> 31))
}

fn pick<'a, T, R: Rng + ?Sized>(
    global: &[&'a T],
    local: &[&'a T],
    frac: f64,
    rng: &mut R,
) -> &'a T {
    let use_global = if global.is_empty() {
        false
    } else if local.is_empty() {
        true
    } else {
        rng.random::<f64>() < frac
    };
    let pool = if use_global { global } else { local };
    pool[rng.random_range(0..pool.len())]
}

/// Draws a batch with the configured global/local mix.
pub fn sample_batch<R: Rng + ?Sized>(
    data: &[TrainingItem],
    size: usize,
    global_fraction: f64,
    rng: &mut R,
) -> Result<TrainingBatch> {
    if data.is_empty() || size == 0 {
        return Err(Error::invalid("cannot sample a batch from an empty dataset"));
    }
    let global: Vec<&TrainingItem> = data.iter().filter(|i| i.source == DataSource::VideoGlobal).collect();
    let local: Vec<&TrainingItem> = data.iter().filter(|i| i.source != DataSource::VideoGlobal).collect();
    let items = (0..size)
        .map(|_| pick(&global, &local, global_fraction, rng).clone())
        .collect();
    Ok(TrainingBatch { items })
}

/// Runs `cfg.steps - state.step` Adam steps on single-view items.
pub fn train(
    state: &mut TrainState,
    data: &[TrainingItem],
    sched: &NoiseSchedule,
    cfg: &TrainConfig,
    mut on_step: impl FnMut(usize, f64),
) -> Result<()> {
    while state.step < cfg.steps {
        let mut rng = step_rng(cfg.seed, state.step);
        let mut batch = sample_batch(data, cfg.batch_size, cfg.global_fraction, &mut rng)?;
        if cfg.drop_rate > 0.0 {
            for item in &mut batch.items {
                item.visibility = random_drop_mask_with(&item.visibility, cfg.drop_rate, &mut rng)?;
            }
        }
        let out = training_loss(&state.params, &batch, sched, &mut rng, cfg.line_weight)?;
        if !out.loss.is_finite() {
            return Err(Error::Numerical(format!("loss diverged at step {}", state.step)));
        }
        adam_step(state.params.values_mut(), &out.grad, &mut state.adam, &cfg.adam)?;
        state.losses.push(out.loss);
        on_step(state.step, out.loss);
        state.step += 1;
    }
    Ok(())
}

/// Multi-view counterpart of [`train`]; items are drawn uniformly.
pub fn train_multiview(
    state: &mut TrainState,
    data: &[MultiViewItem],
    sched: &NoiseSchedule,
    cfg: &TrainConfig,
    mut on_step: impl FnMut(usize, f64),
) -> Result<()> {
    if data.is_empty() {
        return Err(Error::invalid("empty multi-view dataset"));
    }
    while state.step < cfg.steps {
        let mut rng = step_rng(cfg.seed, state.step);
        let mut batch: Vec<MultiViewItem> = (0..cfg.batch_size)
            .map(|_| data[rng.random_range(0..data.len())].clone())
            .collect();
        if cfg.drop_rate > 0.0 {
            for view in batch.iter_mut().flat_map(|m| m.views.iter_mut()) {
                view.visibility = random_drop_mask_with(&view.visibility, cfg.drop_rate, &mut rng)?;
            }
        }
        let out = multiview_training_loss(&state.params, &batch, sched, &mut rng, cfg.line_weight)?;
        if !out.loss.is_finite() {
            return Err(Error::Numerical(format!("loss diverged at step {}", state.step)));
        }
        adam_step(state.params.values_mut(), &out.grad, &mut state.adam, &cfg.adam)?;
        state.losses.push(out.loss);
        on_step(state.step, out.loss);
        state.step += 1;
    }
    Ok(())
}

/// Deterministic held-out loss: every item evaluated at the same fixed
/// draws for a given seed.
pub fn evaluate_loss(
    params: &DenoiserParams,
    data: &[TrainingItem],
    sched: &NoiseSchedule,
    line_weight: f64,
    seed: u64,
    repeats: usize,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::invalid("empty evaluation set"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let batch = TrainingBatch { items: data.to_vec() };
    let mut total = 0.0;
    for _ in 0..repeats.max(1) {
        total += training_loss(params, &batch, sched, &mut rng, line_weight)?.loss;
    }
    Ok(total / repeats.max(1) as f64)
}
