//! Conditional flow-matching training of a small MLP velocity field.
//!
//! The net regresses the straight-path target `y - z` at interpolated
//! states `x_tau = (1 - tau) z + tau y`, with the conditioning embedding
//! appended to the input. Hidden layers use tanh so the learned field is
//! twice differentiable; the output layer is linear. Gradients are exact
//! reverse-mode, optimization is Adam, and every draw comes from one seeded
//! stream so a training run is bit-for-bit repeatable.

use crate::embedding::{weighted, Embedding};
use crate::error::{Error, Result};
use crate::fields::{GaussianMixtureField, Latent, TimePoint, VelocityField};
use crate::numerics::{RealMat, RealVec, Rng};
use std::io::{Read, Write};

/// Stream id for training-time draws.
pub const TRAIN_STREAM: u64 = 2;
/// Stream id for the fixed evaluation batch behind the logged loss curve.
pub const EVAL_STREAM: u64 = 4;

const EVAL_BATCH: usize = 2048;

const CHECKPOINT_MAGIC: &[u8; 4] = b"RFCK";
const CHECKPOINT_VERSION: u32 = 1;

/// Plain fully-connected net: tanh hidden layers, linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    weights: Vec<RealMat>, // weights[l]: sizes[l+1] x sizes[l]
    biases: Vec<RealVec>,
}

impl Mlp {
    /// Init with symmetric uniform weights scaled by `1/sqrt(fan_in)` and
    /// zero biases; draw order is layer by layer, row-major.
    pub fn from_sizes(sizes: &[usize], rng: &mut Rng) -> Self {
        assert!(sizes.len() >= 2, "need at least input and output layers");
        assert!(sizes.iter().all(|s| *s > 0), "layer widths must be positive");
        let mut weights = Vec::with_capacity(sizes.len() - 1);
        let mut biases = Vec::with_capacity(sizes.len() - 1);
        for l in 0..sizes.len() - 1 {
            let fan_in = sizes[l];
            let bound = 1.0 / (fan_in as f64).sqrt();
            let vals: Vec<f64> = (0..sizes[l + 1] * fan_in)
                .map(|_| rng.uniform_in(-bound, bound))
                .collect();
            weights.push(RealMat::new(sizes[l + 1], fan_in, vals));
            biases.push(RealVec::zeros(sizes[l + 1]));
        }
        Mlp {
            sizes: sizes.to_vec(),
            weights,
            biases,
        }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.weights
            .iter()
            .map(|w| w.rows() * w.cols())
            .sum::<usize>()
            + self.biases.iter().map(|b| b.dim()).sum::<usize>()
    }

    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        assert_eq!(input.len(), self.input_dim(), "input width mismatch");
        let mut act = input.to_vec();
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut next = vec![0.0; w.rows()];
            for (r, n) in next.iter_mut().enumerate() {
                let mut z = b[r];
                for c in 0..w.cols() {
                    z += w.get(r, c) * act[c];
                }
                *n = if l < last { z.tanh() } else { z };
            }
            act = next;
        }
        act
    }

    fn forward_cached(&self, input: &[f64]) -> Vec<Vec<f64>> {
        // activations[0] = input, activations[l+1] = layer l output
        let mut acts = Vec::with_capacity(self.sizes.len());
        acts.push(input.to_vec());
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let prev = &acts[l];
            let mut next = vec![0.0; w.rows()];
            for (r, n) in next.iter_mut().enumerate() {
                let mut z = b[r];
                for c in 0..w.cols() {
                    z += w.get(r, c) * prev[c];
                }
                *n = if l < last { z.tanh() } else { z };
            }
            acts.push(next);
        }
        acts
    }

    /// Mean squared-error loss over (input, target) pairs.
    pub fn loss(&self, samples: &[(Vec<f64>, Vec<f64>)]) -> f64 {
        let mut acc = 0.0;
        for (input, target) in samples {
            let out = self.forward(input);
            acc += out
                .iter()
                .zip(target)
                .map(|(o, t)| (o - t) * (o - t))
                .sum::<f64>();
        }
        acc / samples.len() as f64
    }

    /// Exact reverse-mode gradients of [`Mlp::loss`] for every parameter,
    /// flattened in the same order as [`Mlp::params_flat`]. Also returns the
    /// loss of the batch.
    pub fn gradients(&self, samples: &[(Vec<f64>, Vec<f64>)]) -> (Vec<f64>, f64) {
        let n = samples.len() as f64;
        let mut gw: Vec<RealMat> = self
            .weights
            .iter()
            .map(|w| RealMat::zeros(w.rows(), w.cols()))
            .collect();
        let mut gb: Vec<Vec<f64>> = self.biases.iter().map(|b| vec![0.0; b.dim()]).collect();
        let mut loss = 0.0;
        let last = self.weights.len() - 1;
        for (input, target) in samples {
            let acts = self.forward_cached(input);
            let out = &acts[acts.len() - 1];
            loss += out
                .iter()
                .zip(target)
                .map(|(o, t)| (o - t) * (o - t))
                .sum::<f64>();
            // output layer is linear: delta = dL/dz directly
            let mut delta: Vec<f64> = out
                .iter()
                .zip(target)
                .map(|(o, t)| 2.0 * (o - t) / n)
                .collect();
            for l in (0..=last).rev() {
                let prev = &acts[l];
                let w = &self.weights[l];
                for r in 0..w.rows() {
                    gb[l][r] += delta[r];
                    for c in 0..w.cols() {
                        let cur = gw[l].get(r, c);
                        gw[l].set(r, c, cur + delta[r] * prev[c]);
                    }
                }
                if l > 0 {
                    let mut below = vec![0.0; w.cols()];
                    for (c, bc) in below.iter_mut().enumerate() {
                        let mut acc = 0.0;
                        for r in 0..w.rows() {
                            acc += w.get(r, c) * delta[r];
                        }
                        // tanh'(z) written through the cached activation
                        *bc = acc * (1.0 - prev[c] * prev[c]);
                    }
                    delta = below;
                }
            }
        }
        let mut flat = Vec::with_capacity(self.param_count());
        for (w, b) in gw.iter().zip(&gb) {
            flat.extend_from_slice(w.as_slice());
            flat.extend_from_slice(b);
        }
        (flat, loss / n)
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.param_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            flat.extend_from_slice(w.as_slice());
            flat.extend_from_slice(b.as_slice());
        }
        flat
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count(), "parameter count mismatch");
        let mut offset = 0;
        for l in 0..self.weights.len() {
            let (rows, cols) = (self.weights[l].rows(), self.weights[l].cols());
            let wslice = &flat[offset..offset + rows * cols];
            self.weights[l] = RealMat::new(rows, cols, wslice.to_vec());
            offset += rows * cols;
            let bslice = &flat[offset..offset + rows];
            self.biases[l] = RealVec::new(bslice.to_vec());
            offset += rows;
        }
    }
}

/// MLP-backed velocity field: input is `[x, tau, c]` concatenated, output
/// has the state dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpField {
    net: Mlp,
    state_dim: usize,
    cond_dim: usize,
}

impl MlpField {
    pub fn new(state_dim: usize, cond_dim: usize, hidden: &[usize], rng: &mut Rng) -> Self {
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(state_dim + 1 + cond_dim);
        sizes.extend_from_slice(hidden);
        sizes.push(state_dim);
        MlpField {
            net: Mlp::from_sizes(&sizes, rng),
            state_dim,
            cond_dim,
        }
    }

    pub fn with_default_hidden(state_dim: usize, cond_dim: usize, rng: &mut Rng) -> Self {
        MlpField::new(state_dim, cond_dim, &[64, 64], rng)
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    fn assemble_input(&self, x: &[f64], tau: f64, c: &[f64]) -> Vec<f64> {
        let mut input = Vec::with_capacity(self.net.input_dim());
        input.extend_from_slice(x);
        input.push(tau);
        input.extend_from_slice(c);
        input
    }
}

impl VelocityField for MlpField {
    fn velocity(&self, x: &Latent, t: TimePoint, c: &Embedding) -> RealVec {
        assert_eq!(c.dim(), self.cond_dim, "conditioning width mismatch");
        let input = self.assemble_input(x.as_slice(), t.tau(), c.as_slice());
        RealVec::new(self.net.forward(&input))
    }

    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn cond_dim(&self) -> usize {
        self.cond_dim
    }

    // product of tanh-layer weight row-sum norms; loose but finite
    fn lipschitz_bound(&self) -> f64 {
        self.net
            .weights
            .iter()
            .map(|w| {
                (0..w.rows())
                    .map(|r| (0..w.cols()).map(|c| w.get(r, c).abs()).sum())
                    .fold(0.0f64, f64::max)
                    .max(1e-12)
            })
            .product()
    }
}

/// One conditional flow-matching example: a prior draw, a data draw, the
/// conditioning embedding, and the path time.
#[derive(Debug, Clone)]
pub struct CfmPair {
    pub prior_draw: RealVec,
    pub data_draw: RealVec,
    pub cond: Embedding,
    pub tau: f64,
}

impl CfmPair {
    pub fn path_state(&self) -> RealVec {
        crate::numerics::axpy(
            self.tau,
            &self.data_draw.sub(&self.prior_draw),
            &self.prior_draw,
        )
    }

    pub fn target(&self) -> RealVec {
        self.data_draw.sub(&self.prior_draw)
    }
}

/// Mean squared velocity-matching error of any field on a batch.
pub fn cfm_loss(field: &dyn VelocityField, batch: &[CfmPair]) -> f64 {
    assert!(!batch.is_empty(), "cfm_loss needs a non-empty batch");
    let mut acc = 0.0;
    for pair in batch {
        let t = TimePoint::new(pair.tau).expect("tau in [0,1]");
        let v = field.velocity(&Latent::new(pair.path_state()), t, &pair.cond);
        acc += v.sub(&pair.target()).dot(&v.sub(&pair.target()));
    }
    acc / batch.len() as f64
}

/// Converts a batch into raw (input, target) pairs for the net.
fn net_samples(field: &MlpField, batch: &[CfmPair]) -> Vec<(Vec<f64>, Vec<f64>)> {
    batch
        .iter()
        .map(|pair| {
            let x = pair.path_state();
            (
                field.assemble_input(x.as_slice(), pair.tau, pair.cond.as_slice()),
                pair.target().into_values(),
            )
        })
        .collect()
}

/// Reverse-mode gradient of [`cfm_loss`] with respect to every parameter.
pub fn cfm_gradients(field: &MlpField, batch: &[CfmPair]) -> (Vec<f64>, f64) {
    field.net.gradients(&net_samples(field, batch))
}

/// How training draws conditioning embeddings: mostly one-hot class
/// embeddings, sometimes the uniform null, sometimes amplified mixtures so
/// the net also learns the interpolated-embedding region the sampler visits.
#[derive(Debug, Clone)]
pub struct EmbeddingScheme {
    pub p_onehot: f64,
    pub p_uncond: f64,
    pub s_min: f64,
    pub s_max: f64,
}

impl Default for EmbeddingScheme {
    fn default() -> Self {
        EmbeddingScheme {
            p_onehot: 0.5,
            p_uncond: 0.2,
            s_min: -1.5,
            s_max: 4.0,
        }
    }
}

/// Training task: a reference mixture supplies data draws and the
/// embedding-to-class weights used to label mixed conditioning vectors.
#[derive(Debug, Clone)]
pub struct GmTask {
    pub field: GaussianMixtureField,
    pub scheme: EmbeddingScheme,
}

impl GmTask {
    pub fn new(field: GaussianMixtureField, scheme: EmbeddingScheme) -> Self {
        GmTask { field, scheme }
    }

    pub fn sample_pair(&self, rng: &mut Rng) -> CfmPair {
        let classes = self.field.classes();
        let tau = rng.uniform();
        let pick = rng.uniform();
        let cond = if pick < self.scheme.p_onehot {
            Embedding::one_hot(self.field.sample_class(rng), classes)
        } else if pick < self.scheme.p_onehot + self.scheme.p_uncond {
            Embedding::uniform(classes)
        } else {
            let base = Embedding::one_hot(self.field.sample_class(rng), classes);
            let s = rng.uniform_in(self.scheme.s_min, self.scheme.s_max);
            let beta = rng.uniform();
            weighted(&base, &Embedding::uniform(classes), s, beta)
                .expect("beta drawn inside [0,1]")
        };
        let weights = match self.field.embed_map() {
            crate::fields::EmbedMap::OneHot => {
                // hard map: delegate through the field's own assignment
                let mut w = vec![0.0; classes];
                let mut best = 0;
                for (i, v) in cond.as_slice().iter().enumerate() {
                    if *v > cond.as_slice()[best] {
                        best = i;
                    }
                }
                w[best] = 1.0;
                w
            }
            crate::fields::EmbedMap::Softmax { sharpness } => {
                let logits: Vec<f64> = cond.as_slice().iter().map(|v| sharpness * v).collect();
                let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
                let z: f64 = exps.iter().sum();
                exps.into_iter().map(|e| e / z).collect()
            }
        };
        let class = rng.pick_weighted(&weights);
        let data_draw = self.field.sample_data(class, rng);
        let prior_draw = rng.normal_vec(self.field.state_dim());
        CfmPair {
            prior_draw,
            data_draw,
            cond,
            tau,
        }
    }

    pub fn sample_batch(&self, size: usize, rng: &mut Rng) -> Vec<CfmPair> {
        (0..size).map(|_| self.sample_pair(rng)).collect()
    }
}

/// Adam with bias correction over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: usize,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.m.len());
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Batch size, iteration budget, Adam constants, and the seed.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            iterations: 20_000,
            learning_rate: 3e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 7,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.iterations == 0 {
            return Err(Error::OutOfRange {
                what: "batch size / iterations",
                value: 0.0,
                min: 1.0,
                max: f64::INFINITY,
            });
        }
        if self.learning_rate < 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::OutOfRange {
                what: "learning rate",
                value: self.learning_rate,
                min: 0.0,
                max: f64::INFINITY,
            });
        }
        Ok(())
    }
}

/// Runs Adam on the flow-matching loss and returns the trained field plus
/// `(iteration, loss)` samples every 100 iterations and once at the end.
/// The logged losses are measured on one fixed evaluation batch, so the
/// curve tracks the parameters rather than per-batch sampling noise.
/// Deterministic in the config seed.
pub fn train(
    mut field: MlpField,
    task: &GmTask,
    cfg: &TrainConfig,
) -> Result<(MlpField, Vec<(usize, f64)>)> {
    cfg.validate()?;
    let mut eval_rng = Rng::new(cfg.seed, EVAL_STREAM);
    let eval_batch = task.sample_batch(EVAL_BATCH, &mut eval_rng);
    let mut rng = Rng::new(cfg.seed, TRAIN_STREAM);
    let mut params = field.net.params_flat();
    let mut adam = Adam::new(
        params.len(),
        cfg.learning_rate,
        cfg.beta1,
        cfg.beta2,
        cfg.epsilon,
    );
    let mut curve = Vec::new();
    for iter in 0..cfg.iterations {
        let batch = task.sample_batch(cfg.batch_size, &mut rng);
        let (grads, loss) = cfm_gradients(&field, &batch);
        if !loss.is_finite() {
            return Err(Error::Divergence {
                iteration: iter,
                loss,
            });
        }
        if iter % 100 == 0 {
            curve.push((iter, cfm_loss(&field, &eval_batch)));
        }
        adam.update(&mut params, &grads);
        field.net.set_params_flat(&params);
    }
    curve.push((cfg.iterations, cfm_loss(&field, &eval_batch)));
    Ok((field, curve))
}

/// Writes the checkpoint: magic `RFCK`, little-endian u32 version, u32 layer
/// count, then per layer u32 rows/cols followed by row-major f64 weights and
/// the f64 bias vector, and a trailing u64 seed.
pub fn save_checkpoint<W: Write>(field: &MlpField, seed: u64, w: &mut W) -> std::io::Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(field.net.weights.len() as u32).to_le_bytes())?;
    for (mat, bias) in field.net.weights.iter().zip(&field.net.biases) {
        w.write_all(&(mat.rows() as u32).to_le_bytes())?;
        w.write_all(&(mat.cols() as u32).to_le_bytes())?;
        for v in mat.as_slice() {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in bias.as_slice() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.write_all(&seed.to_le_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}

/// Reads a checkpoint back; the caller supplies the state/conditioning
/// split because the input width alone does not determine it.
pub fn load_checkpoint<R: Read>(
    r: &mut R,
    state_dim: usize,
    cond_dim: usize,
) -> Result<(MlpField, u64)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::InvalidConfig {
            key: "checkpoint".into(),
            reason: format!("bad magic {magic:?}"),
        });
    }
    let version = read_u32(r)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::InvalidConfig {
            key: "checkpoint".into(),
            reason: format!("unsupported version {version}"),
        });
    }
    let layers = read_u32(r)? as usize;
    if layers == 0 {
        return Err(Error::InvalidConfig {
            key: "checkpoint".into(),
            reason: "zero layers".into(),
        });
    }
    let mut weights = Vec::with_capacity(layers);
    let mut biases = Vec::with_capacity(layers);
    let mut sizes = Vec::with_capacity(layers + 1);
    for l in 0..layers {
        let rows = read_u32(r)? as usize;
        let cols = read_u32(r)? as usize;
        if l == 0 {
            sizes.push(cols);
        } else if sizes[l] != cols {
            return Err(Error::InvalidConfig {
                key: "checkpoint".into(),
                reason: format!("layer {l} input {cols} != previous output {}", sizes[l]),
            });
        }
        sizes.push(rows);
        let mut wv = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            wv.push(read_f64(r)?);
        }
        let mut bv = Vec::with_capacity(rows);
        for _ in 0..rows {
            bv.push(read_f64(r)?);
        }
        weights.push(RealMat::new(rows, cols, wv));
        biases.push(RealVec::new(bv));
    }
    let mut seed_buf = [0u8; 8];
    r.read_exact(&mut seed_buf)?;
    let seed = u64::from_le_bytes(seed_buf);
    if sizes[0] != state_dim + 1 + cond_dim || *sizes.last().unwrap() != state_dim {
        return Err(Error::InvalidConfig {
            key: "checkpoint".into(),
            reason: format!(
                "layer widths {sizes:?} incompatible with state {state_dim} + cond {cond_dim}"
            ),
        });
    }
    Ok((
        MlpField {
            net: Mlp {
                sizes,
                weights,
                biases,
            },
            state_dim,
            cond_dim,
        },
        seed,
    ))
}
