//! Compact conditional denoiser: per-frame encoder, residual temporal
//! convolutions, optional cross-view attention, linear head.
//!
//! Weights are kept in one flat vector. Each matrix occupies a contiguous
//! column-major block so it can be viewed in place.

use nalgebra::{DMatrix, DMatrixView, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use super::{Conditioning, Denoiser, MultiViewDenoiser};
use crate::error::{Error, Result};

/// Architecture hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DenoiserDims {
    pub joints: usize,
    pub hidden: usize,
    pub depth: usize,
    /// Width of the sinusoidal step embedding (even).
    pub embed: usize,
    pub cross_view: bool,
}

impl DenoiserDims {
    pub fn new(joints: usize, hidden: usize, depth: usize, embed: usize) -> Self {
        Self {
            joints,
            hidden,
            depth,
            embed,
            cross_view: false,
        }
    }

    pub fn with_cross_view(mut self, on: bool) -> Self {
        self.cross_view = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.joints == 0 || self.hidden == 0 {
            return Err(Error::invalid("denoiser needs joints > 0 and hidden > 0"));
        }
        if self.embed == 0 || self.embed % 2 != 0 {
            return Err(Error::invalid("step embedding width must be even and positive"));
        }
        Ok(())
    }

    /// Per-frame feature width: keypoints, camera, lines, step embedding.
    pub fn input_width(&self) -> usize {
        5 * self.joints + 12 + self.embed
    }

    pub fn output_width(&self) -> usize {
        2 * self.joints
    }

    /// `H Din + H + D (3 H^2 + H) + 2K H + 2K`, plus `4 H^2` with cross-view
    /// attention.
    pub fn param_count(&self) -> usize {
        let (h, din, k2) = (self.hidden, self.input_width(), self.output_width());
        let mut n = h * din + h + self.depth * (3 * h * h + h) + k2 * h + k2;
        if self.cross_view {
            n += 4 * h * h;
        }
        n
    }

    pub fn shape_string(&self) -> String {
        format!(
            "denoiser:K={}:H={}:D={}:E={}:X={}:P={}",
            self.joints,
            self.hidden,
            self.depth,
            self.embed,
            self.cross_view as u8,
            self.param_count()
        )
    }

    /// Hex SHA-256 of [`shape_string`](Self::shape_string); stored in
    /// checkpoints and checked on load.
    pub fn shape_hash(&self) -> String {
        hex::encode(Sha256::digest(self.shape_string().as_bytes()))
    }
}

/// Offsets of each block inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    pub w_in: usize,
    pub b_in: usize,
    /// Per layer: kernel taps for offsets -1, 0, +1, then the bias.
    pub layers: Vec<([usize; 3], usize)>,
    pub w_out: usize,
    pub b_out: usize,
    /// Query, key, value, output projections.
    pub cross: Option<[usize; 4]>,
    pub len: usize,
}

impl ParamLayout {
    pub fn new(d: &DenoiserDims) -> Self {
        let (h, din, k2) = (d.hidden, d.input_width(), d.output_width());
        let mut off = 0;
        let mut take = |n: usize| {
            let o = off;
            off += n;
            o
        };
        let w_in = take(h * din);
        let b_in = take(h);
        let layers = (0..d.depth)
            .map(|_| ([take(h * h), take(h * h), take(h * h)], take(h)))
            .collect();
        let w_out = take(k2 * h);
        let b_out = take(k2);
        let cross = d
            .cross_view
            .then(|| [take(h * h), take(h * h), take(h * h), take(h * h)]);
        Self {
            w_in,
            b_in,
            layers,
            w_out,
            b_out,
            cross,
            len: off,
        }
    }
}

/// Sinusoidal embedding of the diffusion step.
pub fn step_embedding(n: usize, width: usize) -> Vec<f64> {
    let half = width / 2;
    let mut e = vec![0.0; width];
    for i in 0..half {
        let freq = (-(10000f64.ln()) * i as f64 / half as f64).exp();
        let a = n as f64 * freq;
        e[i] = a.sin();
        e[half + i] = a.cos();
    }
    e
}

/// Trainable denoiser weights.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams {
    dims: DenoiserDims,
    layout: ParamLayout,
    values: Vec<f64>,
}

/// Activations of one view's encoder and temporal stack.
#[derive(Debug, Clone)]
struct TrunkCache {
    /// `Din x T` input features.
    feats: DMatrix<f64>,
    /// Hidden states `h^0..h^D`, each `H x T`.
    hidden: Vec<DMatrix<f64>>,
    /// `tanh` of each temporal layer's pre-activation.
    acts: Vec<DMatrix<f64>>,
}

/// Activations needed by [`DenoiserParams::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    trunk: TrunkCache,
    frames: usize,
    fingerprint: u64,
}

#[derive(Debug, Clone)]
struct AttentionFrame {
    /// `H x V` input states of this frame.
    states: DMatrix<f64>,
    q: DMatrix<f64>,
    k: DMatrix<f64>,
    v: DMatrix<f64>,
    /// `V x V` weights; row = query view.
    attn: DMatrix<f64>,
    ctx: DMatrix<f64>,
}

/// Activations needed by [`DenoiserParams::backward_multiview`].
#[derive(Debug, Clone)]
pub struct MultiViewCache {
    trunks: Vec<TrunkCache>,
    attention: Vec<AttentionFrame>,
    mixed: Vec<DMatrix<f64>>,
    frames: usize,
    fingerprint: u64,
}

fn fingerprint(values: &[f64]) -> u64 {
    // FNV-1a over the bit patterns.
    let mut h: u64 = 0xcbf29ce484222325;
    for v in values {
        h ^= v.to_bits();
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn add_into(dst: &mut [f64], m: &DMatrix<f64>) {
    for (d, s) in dst.iter_mut().zip(m.as_slice()) {
        *d += s;
    }
}

fn add_row_sums(dst: &mut [f64], m: &DMatrix<f64>) {
    for c in 0..m.ncols() {
        for r in 0..m.nrows() {
            dst[r] += m[(r, c)];
        }
    }
}

impl DenoiserParams {
    pub fn zeros(dims: DenoiserDims) -> Result<Self> {
        dims.validate()?;
        let layout = ParamLayout::new(&dims);
        Ok(Self {
            values: vec![0.0; layout.len],
            dims,
            layout,
        })
    }

    /// Scaled Gaussian initialization; the cross-view output projection
    /// starts at zero so a fresh attention block is the identity.
    pub fn init<R: Rng + ?Sized>(dims: DenoiserDims, rng: &mut R) -> Result<Self> {
        let mut p = Self::zeros(dims)?;
        let (h, din, k2) = (dims.hidden, dims.input_width(), dims.output_width());
        let layout = p.layout.clone();
        p.fill_gaussian(rng, layout.w_in, h * din, 1.0 / (din as f64).sqrt());
        for (taps, _) in &layout.layers {
            for &o in taps {
                p.fill_gaussian(rng, o, h * h, 0.5 / (3.0 * h as f64).sqrt());
            }
        }
        p.fill_gaussian(rng, layout.w_out, k2 * h, 0.1 / (h as f64).sqrt());
        if let Some(c) = layout.cross {
            for &o in &c[..3] {
                p.fill_gaussian(rng, o, h * h, 1.0 / (h as f64).sqrt());
            }
        }
        Ok(p)
    }

    fn fill_gaussian<R: Rng + ?Sized>(&mut self, rng: &mut R, off: usize, n: usize, scale: f64) {
        for v in &mut self.values[off..off + n] {
            let z: f64 = rng.sample(StandardNormal);
            *v = scale * z;
        }
    }

    pub fn from_values(dims: DenoiserDims, values: Vec<f64>) -> Result<Self> {
        dims.validate()?;
        let layout = ParamLayout::new(&dims);
        if values.len() != layout.len {
            return Err(Error::shape(format!(
                "expected {} denoiser weights, got {}",
                layout.len,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite denoiser weight".into()));
        }
        Ok(Self { dims, layout, values })
    }

    /// Copies these weights into a cross-view model. Query/key/value are
    /// drawn from `rng`, the output projection is zero.
    pub fn with_cross_view<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Self> {
        if self.dims.cross_view {
            return Ok(self.clone());
        }
        let dims = self.dims.with_cross_view(true);
        let mut p = Self::zeros(dims)?;
        p.values[..self.values.len()].copy_from_slice(&self.values);
        let h = dims.hidden;
        let c = p.layout.cross.expect("cross-view layout");
        for &o in &c[..3] {
            p.fill_gaussian(rng, o, h * h, 1.0 / (h as f64).sqrt());
        }
        Ok(p)
    }

    pub fn dims(&self) -> &DenoiserDims {
        &self.dims
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn mat(&self, off: usize, rows: usize, cols: usize) -> DMatrixView<'_, f64> {
        DMatrixView::from_slice(&self.values[off..off + rows * cols], rows, cols)
    }

    fn vec(&self, off: usize, n: usize) -> DVector<f64> {
        DVector::from_column_slice(&self.values[off..off + n])
    }

    fn check_input(&self, xn: &[f64], cond: &Conditioning) -> Result<usize> {
        let k = self.dims.joints;
        if cond.joints != k {
            return Err(Error::shape(format!("model has {k} joints, conditioning has {}", cond.joints)));
        }
        let t = cond.frames;
        if t == 0 {
            return Err(Error::shape("empty sequence"));
        }
        if xn.len() != t * 2 * k {
            return Err(Error::shape(format!(
                "sample has {} values, expected {} ({t} frames x {k} joints x 2)",
                xn.len(),
                t * 2 * k
            )));
        }
        if cond.camera.len() != t || cond.lines.len() != t * k {
            return Err(Error::shape("conditioning length differs from the sequence"));
        }
        Ok(t)
    }

    fn features(&self, xn: &[f64], n: usize, cond: &Conditioning, t_n: usize) -> DMatrix<f64> {
        let k = self.dims.joints;
        let din = self.dims.input_width();
        let emb = step_embedding(n, self.dims.embed);
        let mut f = DMatrix::zeros(din, t_n);
        for t in 0..t_n {
            let mut col = f.column_mut(t);
            let mut r = 0;
            for &v in &xn[t * 2 * k..(t + 1) * 2 * k] {
                col[r] = v;
                r += 1;
            }
            for &v in &cond.camera[t] {
                col[r] = v;
                r += 1;
            }
            for l in &cond.lines[t * k..(t + 1) * k] {
                for &v in l {
                    col[r] = v;
                    r += 1;
                }
            }
            for &v in &emb {
                col[r] = v;
                r += 1;
            }
        }
        f
    }

    fn trunk_forward(&self, xn: &[f64], n: usize, cond: &Conditioning) -> Result<TrunkCache> {
        let t_n = self.check_input(xn, cond)?;
        let (h, din) = (self.dims.hidden, self.dims.input_width());
        let feats = self.features(xn, n, cond, t_n);
        let l = &self.layout;
        let mut a0 = self.mat(l.w_in, h, din) * &feats;
        let b_in = self.vec(l.b_in, h);
        for mut c in a0.column_iter_mut() {
            c += &b_in;
        }
        let h0 = a0.map(f64::tanh);
        let mut hidden = vec![h0];
        let mut acts = Vec::with_capacity(self.dims.depth);
        for (taps, b) in &l.layers {
            let prev = hidden.last().expect("hidden state");
            let mut z = self.mat(taps[1], h, h) * prev;
            if t_n > 1 {
                let left = self.mat(taps[0], h, h) * prev.columns(0, t_n - 1);
                let right = self.mat(taps[2], h, h) * prev.columns(1, t_n - 1);
                let mut zr = z.columns_mut(1, t_n - 1);
                zr += &left;
                let mut zl = z.columns_mut(0, t_n - 1);
                zl += &right;
            }
            let bias = self.vec(*b, h);
            for mut c in z.column_iter_mut() {
                c += &bias;
            }
            let s = z.map(f64::tanh);
            let next = prev + &s;
            acts.push(s);
            hidden.push(next);
        }
        Ok(TrunkCache { feats, hidden, acts })
    }

    fn head(&self, top: &DMatrix<f64>) -> Vec<f64> {
        let (h, k2) = (self.dims.hidden, self.dims.output_width());
        let mut y = self.mat(self.layout.w_out, k2, h) * top;
        let b = self.vec(self.layout.b_out, k2);
        for mut c in y.column_iter_mut() {
            c += &b;
        }
        // Column-major `2K x T` is exactly the flat frame-major layout.
        y.as_slice().to_vec()
    }

    /// Backpropagates `d_top` (gradient w.r.t. the top hidden state) through
    /// the temporal stack and encoder. Returns the gradient w.r.t. the
    /// noisy keypoints.
    fn trunk_backward(&self, c: &TrunkCache, d_top: DMatrix<f64>, grad: &mut [f64]) -> Vec<f64> {
        let (h, din, k2) = (self.dims.hidden, self.dims.input_width(), self.dims.output_width());
        let t_n = c.feats.ncols();
        let l = &self.layout;
        let mut dh = d_top;
        for (d, (taps, b)) in l.layers.iter().enumerate().rev() {
            let prev = &c.hidden[d];
            let s = &c.acts[d];
            let dz = dh.zip_map(s, |g, s| g * (1.0 - s * s));
            add_row_sums(&mut grad[*b..*b + h], &dz);
            add_into(&mut grad[taps[1]..taps[1] + h * h], &(&dz * prev.transpose()));
            let mut dprev = dh;
            dprev += self.mat(taps[1], h, h).transpose() * &dz;
            if t_n > 1 {
                let dz_hi = dz.columns(1, t_n - 1);
                let dz_lo = dz.columns(0, t_n - 1);
                let p_lo = prev.columns(0, t_n - 1);
                let p_hi = prev.columns(1, t_n - 1);
                add_into(&mut grad[taps[0]..taps[0] + h * h], &(dz_hi * p_lo.transpose()));
                add_into(&mut grad[taps[2]..taps[2] + h * h], &(dz_lo * p_hi.transpose()));
                let back = self.mat(taps[0], h, h).transpose() * dz_hi;
                let fwd = self.mat(taps[2], h, h).transpose() * dz_lo;
                let mut lo = dprev.columns_mut(0, t_n - 1);
                lo += &back;
                let mut hi = dprev.columns_mut(1, t_n - 1);
                hi += &fwd;
            }
            dh = dprev;
        }
        let h0 = &c.hidden[0];
        let da0 = dh.zip_map(h0, |g, a| g * (1.0 - a * a));
        add_row_sums(&mut grad[l.b_in..l.b_in + h], &da0);
        add_into(&mut grad[l.w_in..l.w_in + h * din], &(&da0 * c.feats.transpose()));
        let df = self.mat(l.w_in, h, din).transpose() * &da0;
        let mut dx = Vec::with_capacity(t_n * k2);
        for t in 0..t_n {
            dx.extend(df.column(t).iter().take(k2));
        }
        dx
    }

    fn head_backward(&self, top: &DMatrix<f64>, dy: &[f64], grad: &mut [f64]) -> DMatrix<f64> {
        let (h, k2) = (self.dims.hidden, self.dims.output_width());
        let t_n = top.ncols();
        let dy = DMatrix::from_column_slice(k2, t_n, dy);
        let l = &self.layout;
        add_row_sums(&mut grad[l.b_out..l.b_out + k2], &dy);
        add_into(&mut grad[l.w_out..l.w_out + k2 * h], &(&dy * top.transpose()));
        self.mat(l.w_out, k2, h).transpose() * dy
    }

    /// Single-view prediction of `x0` with the activations for
    /// [`backward`](Self::backward).
    pub fn forward(&self, xn: &[f64], n: usize, cond: &Conditioning) -> Result<(Vec<f64>, ForwardCache)> {
        let trunk = self.trunk_forward(xn, n, cond)?;
        let y = self.head(trunk.hidden.last().expect("hidden state"));
        Ok((
            y,
            ForwardCache {
                frames: cond.frames,
                trunk,
                fingerprint: fingerprint(&self.values),
            },
        ))
    }

    /// Exact reverse-mode gradients: `(d params, d xn)`.
    pub fn backward(&self, cache: &ForwardCache, dy: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if cache.fingerprint != fingerprint(&self.values) {
            return Err(Error::invalid("stale forward cache: weights changed since forward"));
        }
        if dy.len() != cache.frames * self.dims.output_width() {
            return Err(Error::shape("output gradient length mismatch"));
        }
        let mut grad = vec![0.0; self.values.len()];
        let top = cache.trunk.hidden.last().expect("hidden state");
        let d_top = self.head_backward(top, dy, &mut grad);
        let dx = self.trunk_backward(&cache.trunk, d_top, &mut grad);
        Ok((grad, dx))
    }

    /// Independent single-view predictions for a batch of items.
    pub fn predict_batch(&self, xs: &[Vec<f64>], n: usize, conds: &[Conditioning]) -> Result<Vec<Vec<f64>>> {
        if xs.len() != conds.len() {
            return Err(Error::shape("batch and conditioning counts differ"));
        }
        xs.iter()
            .zip(conds)
            .map(|(x, c)| self.forward(x, n, c).map(|r| r.0))
            .collect()
    }

    fn attend(&self, states: DMatrix<f64>) -> (DMatrix<f64>, AttentionFrame) {
        let h = self.dims.hidden;
        let c = self.layout.cross.expect("cross-view layout");
        let nv = states.ncols();
        let q = self.mat(c[0], h, h) * &states;
        let k = self.mat(c[1], h, h) * &states;
        let v = self.mat(c[2], h, h) * &states;
        let scale = 1.0 / (h as f64).sqrt();
        let mut attn = DMatrix::zeros(nv, nv);
        for a in 0..nv {
            let mut mx = f64::NEG_INFINITY;
            for b in 0..nv {
                if a != b {
                    mx = mx.max(q.column(a).dot(&k.column(b)) * scale);
                }
            }
            let mut sum = 0.0;
            for b in 0..nv {
                if a != b {
                    let e = (q.column(a).dot(&k.column(b)) * scale - mx).exp();
                    attn[(a, b)] = e;
                    sum += e;
                }
            }
            if sum > 0.0 {
                for b in 0..nv {
                    attn[(a, b)] /= sum;
                }
            }
        }
        let ctx = &v * attn.transpose();
        let out = &states + self.mat(c[3], h, h) * &ctx;
        (
            out,
            AttentionFrame {
                states,
                q,
                k,
                v,
                attn,
                ctx,
            },
        )
    }

    fn attend_backward(&self, f: &AttentionFrame, d_out: &DMatrix<f64>, grad: &mut [f64]) -> DMatrix<f64> {
        let h = self.dims.hidden;
        let c = self.layout.cross.expect("cross-view layout");
        let nv = f.states.ncols();
        let scale = 1.0 / (h as f64).sqrt();
        add_into(&mut grad[c[3]..c[3] + h * h], &(d_out * f.ctx.transpose()));
        let d_ctx = self.mat(c[3], h, h).transpose() * d_out;
        let d_v = &d_ctx * &f.attn;
        let d_attn = d_ctx.transpose() * &f.v;
        let mut d_s = DMatrix::zeros(nv, nv);
        for a in 0..nv {
            let dot: f64 = (0..nv).map(|b| f.attn[(a, b)] * d_attn[(a, b)]).sum();
            for b in 0..nv {
                d_s[(a, b)] = f.attn[(a, b)] * (d_attn[(a, b)] - dot) * scale;
            }
        }
        let d_q = &f.k * d_s.transpose();
        let d_k = &f.q * &d_s;
        let st = f.states.transpose();
        add_into(&mut grad[c[0]..c[0] + h * h], &(&d_q * &st));
        add_into(&mut grad[c[1]..c[1] + h * h], &(&d_k * &st));
        add_into(&mut grad[c[2]..c[2] + h * h], &(&d_v * &st));
        let mut d_states = d_out.clone();
        d_states += self.mat(c[0], h, h).transpose() * d_q;
        d_states += self.mat(c[1], h, h).transpose() * d_k;
        d_states += self.mat(c[2], h, h).transpose() * d_v;
        d_states
    }

    /// Joint prediction for `V` views of the same frames. Without cross-view
    /// weights (or with a single view) this equals `V` independent
    /// [`forward`](Self::forward) calls.
    pub fn forward_multiview(
        &self,
        xs: &[Vec<f64>],
        n: usize,
        conds: &[Conditioning],
    ) -> Result<(Vec<Vec<f64>>, MultiViewCache)> {
        if xs.is_empty() || xs.len() != conds.len() {
            return Err(Error::shape("need one conditioning per view and at least one view"));
        }
        let t_n = conds[0].frames;
        if conds.iter().any(|c| c.frames != t_n) {
            return Err(Error::shape("views disagree on the number of frames"));
        }
        let trunks = xs
            .iter()
            .zip(conds)
            .map(|(x, c)| self.trunk_forward(x, n, c))
            .collect::<Result<Vec<_>>>()?;
        let nv = xs.len();
        let h = self.dims.hidden;
        let mut mixed: Vec<DMatrix<f64>> = trunks.iter().map(|c| c.hidden.last().expect("hidden").clone()).collect();
        let mut attention = Vec::new();
        if self.layout.cross.is_some() && nv > 1 {
            for t in 0..t_n {
                let mut states = DMatrix::zeros(h, nv);
                for (v, m) in mixed.iter().enumerate() {
                    states.set_column(v, &m.column(t));
                }
                let (out, frame) = self.attend(states);
                for (v, m) in mixed.iter_mut().enumerate() {
                    m.set_column(t, &out.column(v));
                }
                attention.push(frame);
            }
        }
        let ys = mixed.iter().map(|m| self.head(m)).collect();
        Ok((
            ys,
            MultiViewCache {
                trunks,
                attention,
                mixed,
                frames: t_n,
                fingerprint: fingerprint(&self.values),
            },
        ))
    }

    /// Gradients for [`forward_multiview`](Self::forward_multiview):
    /// `(d params, d xs)`.
    pub fn backward_multiview(&self, cache: &MultiViewCache, dys: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        if cache.fingerprint != fingerprint(&self.values) {
            return Err(Error::invalid("stale forward cache: weights changed since forward"));
        }
        if dys.len() != cache.trunks.len()
            || dys.iter().any(|d| d.len() != cache.frames * self.dims.output_width())
        {
            return Err(Error::shape("output gradient shape mismatch"));
        }
        let mut grad = vec![0.0; self.values.len()];
        let mut d_mixed: Vec<DMatrix<f64>> = cache
            .mixed
            .iter()
            .zip(dys)
            .map(|(m, dy)| self.head_backward(m, dy, &mut grad))
            .collect();
        if !cache.attention.is_empty() {
            let h = self.dims.hidden;
            let nv = d_mixed.len();
            for (t, frame) in cache.attention.iter().enumerate() {
                let mut d_out = DMatrix::zeros(h, nv);
                for (v, d) in d_mixed.iter().enumerate() {
                    d_out.set_column(v, &d.column(t));
                }
                let d_states = self.attend_backward(frame, &d_out, &mut grad);
                for (v, d) in d_mixed.iter_mut().enumerate() {
                    d.set_column(t, &d_states.column(v));
                }
            }
        }
        let dxs = cache
            .trunks
            .iter()
            .zip(d_mixed)
            .map(|(c, d)| self.trunk_backward(c, d, &mut grad))
            .collect();
        Ok((grad, dxs))
    }
}

impl Denoiser for DenoiserParams {
    fn predict_x0(&self, xn: &[f64], n: usize, cond: &Conditioning) -> Result<Vec<f64>> {
        Ok(self.forward(xn, n, cond)?.0)
    }
}

impl MultiViewDenoiser for DenoiserParams {
    fn predict_x0_views(&self, xs: &[Vec<f64>], n: usize, conds: &[Conditioning]) -> Result<Vec<Vec<f64>>> {
        Ok(self.forward_multiview(xs, n, conds)?.0)
    }
}
