//! Small fully connected networks with hand-written backpropagation.
//!
//! Hidden layers use the rectifier; the output layer is linear or logistic.
//! All parameters of a network live in one flat vector, layer after layer,
//! each layer stored as its row-major `out × in` weight matrix followed by
//! its bias. Optimisers, target-network updates and checkpoints operate on
//! that flat vector directly.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{logistic, Scalar};

pub const CHECKPOINT_MAGIC: &[u8; 16] = b"DEEPRAT-DENSENET";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("expected input of length {expected}, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("network architectures differ")]
    ArchitectureMismatch,
    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutputActivation {
    Linear,
    Logistic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseNet<T> {
    widths: Vec<usize>,
    output: OutputActivation,
    params: Vec<T>,
}

/// Activations recorded by [`DenseNet::forward_cached`].
#[derive(Clone, Debug)]
pub struct ForwardCache<T> {
    /// `activations[0]` is the input, `activations[k]` the output of layer `k`.
    activations: Vec<Vec<T>>,
    pre: Vec<Vec<T>>,
}

impl<T: Scalar> ForwardCache<T> {
    pub fn output(&self) -> &[T] {
        self.activations.last().expect("non-empty cache")
    }

    pub fn input(&self) -> &[T] {
        &self.activations[0]
    }

    /// Output-layer pre-activations.
    pub fn logits(&self) -> &[T] {
        self.pre.last().expect("non-empty cache")
    }
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = T::zero();
    for (x, y) in ra.iter().zip(rb) {
        tail += *x * *y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

#[inline]
fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * *xi;
    }
}

impl<T: Scalar> DenseNet<T> {
    /// Xavier-uniform weights `U(-√(6/(fan_in+fan_out)), +…)`, zero biases.
    pub fn new<R: Rng + ?Sized>(widths: &[usize], output: OutputActivation, rng: &mut R) -> Self {
        assert!(widths.len() >= 2, "a network needs input and output widths");
        assert!(widths.iter().all(|&w| w > 0), "layer widths must be positive");
        let mut params = Vec::with_capacity(Self::param_count_for(widths));
        for pair in widths.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                params.push(T::of(rng.random_range(-limit..limit)));
            }
            params.extend(std::iter::repeat_n(T::zero(), fan_out));
        }
        Self {
            widths: widths.to_vec(),
            output,
            params,
        }
    }

    /// Network with every parameter set to zero.
    pub fn zeros(widths: &[usize], output: OutputActivation) -> Self {
        Self {
            widths: widths.to_vec(),
            output,
            params: vec![T::zero(); Self::param_count_for(widths)],
        }
    }

    fn param_count_for(widths: &[usize]) -> usize {
        widths.windows(2).map(|p| p[0] * p[1] + p[1]).sum()
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output
    }

    pub fn layer_count(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Offsets of layer `k`'s weight block and bias block in the flat vector.
    pub fn layer_offsets(&self, k: usize) -> (usize, usize) {
        let mut off = 0;
        for pair in self.widths.windows(2).take(k) {
            off += pair[0] * pair[1] + pair[1];
        }
        (off, off + self.widths[k] * self.widths[k + 1])
    }

    pub fn same_architecture(&self, other: &Self) -> bool {
        self.widths == other.widths && self.output == other.output
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    pub fn forward(&self, input: &[T]) -> Result<Vec<T>, NnError> {
        self.check_input(input)?;
        let mut a = input.to_vec();
        let mut off = 0;
        let last = self.layer_count() - 1;
        for k in 0..self.layer_count() {
            let (n_in, n_out) = (self.widths[k], self.widths[k + 1]);
            let w = &self.params[off..off + n_in * n_out];
            let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            off += n_in * n_out + n_out;
            let mut z: Vec<T> = (0..n_out)
                .map(|j| dot(&w[j * n_in..(j + 1) * n_in], &a) + b[j])
                .collect();
            self.activate(k == last, &mut z);
            a = z;
        }
        Ok(a)
    }

    /// Forward pass that keeps what [`DenseNet::backward`] needs.
    pub fn forward_cached(&self, input: &[T]) -> Result<ForwardCache<T>, NnError> {
        self.check_input(input)?;
        let mut activations = Vec::with_capacity(self.widths.len());
        let mut pre = Vec::with_capacity(self.layer_count());
        activations.push(input.to_vec());
        let mut off = 0;
        let last = self.layer_count() - 1;
        for k in 0..self.layer_count() {
            let (n_in, n_out) = (self.widths[k], self.widths[k + 1]);
            let w = &self.params[off..off + n_in * n_out];
            let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            off += n_in * n_out + n_out;
            let a = &activations[k];
            let z: Vec<T> = (0..n_out)
                .map(|j| dot(&w[j * n_in..(j + 1) * n_in], a) + b[j])
                .collect();
            let mut y = z.clone();
            self.activate(k == last, &mut y);
            pre.push(z);
            activations.push(y);
        }
        Ok(ForwardCache { activations, pre })
    }

    fn activate(&self, is_output: bool, z: &mut [T]) {
        if !is_output {
            for v in z.iter_mut() {
                *v = v.max(T::zero());
            }
        } else if self.output == OutputActivation::Logistic {
            for v in z.iter_mut() {
                *v = logistic(*v);
            }
        }
    }

    fn check_input(&self, input: &[T]) -> Result<(), NnError> {
        if input.len() != self.widths[0] {
            return Err(NnError::Shape {
                expected: self.widths[0],
                got: input.len(),
            });
        }
        Ok(())
    }

    /// Reverse-mode pass. Adds `∂L/∂θ` into `grads` and returns `∂L/∂input`,
    /// given `grad_output = ∂L/∂output`.
    pub fn backward(
        &self,
        cache: &ForwardCache<T>,
        grad_output: &[T],
        grads: &mut [T],
    ) -> Result<Vec<T>, NnError> {
        if grad_output.len() != self.output_width() {
            return Err(NnError::Shape {
                expected: self.output_width(),
                got: grad_output.len(),
            });
        }
        if grads.len() != self.params.len() || cache.activations.len() != self.widths.len() {
            return Err(NnError::ArchitectureMismatch);
        }
        let last = self.layer_count() - 1;
        let mut delta: Vec<T> = grad_output.to_vec();
        if self.output == OutputActivation::Logistic {
            for (d, y) in delta.iter_mut().zip(cache.output()) {
                *d *= *y * (T::one() - *y);
            }
        }
        for k in (0..=last).rev() {
            let (n_in, n_out) = (self.widths[k], self.widths[k + 1]);
            let (w_off, b_off) = self.layer_offsets(k);
            let a_in = &cache.activations[k];
            {
                let gw = &mut grads[w_off..w_off + n_in * n_out];
                for j in 0..n_out {
                    if delta[j] != T::zero() {
                        axpy(delta[j], a_in, &mut gw[j * n_in..(j + 1) * n_in]);
                    }
                }
            }
            for j in 0..n_out {
                grads[b_off + j] += delta[j];
            }
            let w = &self.params[w_off..w_off + n_in * n_out];
            let mut below = vec![T::zero(); n_in];
            for j in 0..n_out {
                if delta[j] != T::zero() {
                    axpy(delta[j], &w[j * n_in..(j + 1) * n_in], &mut below);
                }
            }
            if k > 0 {
                for (b, z) in below.iter_mut().zip(&cache.pre[k - 1]) {
                    if *z <= T::zero() {
                        *b = T::zero();
                    }
                }
            }
            delta = below;
        }
        Ok(delta)
    }

    /// 64-bit FNV-1a digest of the architecture and parameter bits.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |b: u8| {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        };
        for w in &self.widths {
            for b in (*w as u64).to_le_bytes() {
                eat(b);
            }
        }
        let mut buf = Vec::with_capacity(T::BYTES);
        for p in &self.params {
            buf.clear();
            p.write_le(&mut buf);
            for &b in &buf {
                eat(b);
            }
        }
        h
    }

    /// Serialises to the little-endian checkpoint layout:
    /// magic (16 B), version (u32), scalar width (u8), output activation (u8),
    /// two reserved bytes, layer-width count (u32), widths (u32 each), then
    /// every parameter in flat order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + self.params.len() * T::BYTES);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.push(T::BYTES as u8);
        out.push(match self.output {
            OutputActivation::Linear => 0,
            OutputActivation::Logistic => 1,
        });
        out.extend_from_slice(&[0, 0]);
        out.extend_from_slice(&(self.widths.len() as u32).to_le_bytes());
        for &w in &self.widths {
            out.extend_from_slice(&(w as u32).to_le_bytes());
        }
        for p in &self.params {
            p.write_le(&mut out);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NnError> {
        let bad = |m: &str| NnError::Checkpoint(m.to_string());
        let mut cur = bytes;
        let mut take = |n: usize| -> Result<&[u8], NnError> {
            if cur.len() < n {
                return Err(bad("truncated"));
            }
            let (head, tail) = cur.split_at(n);
            cur = tail;
            Ok(head)
        };
        if take(16)? != CHECKPOINT_MAGIC {
            return Err(bad("bad magic"));
        }
        let u32_at = |b: &[u8]| u32::from_le_bytes([b[0], b[1], b[2], b[3]]);
        let version = u32_at(take(4)?);
        if version != CHECKPOINT_VERSION {
            return Err(NnError::Checkpoint(format!("unsupported version {version}")));
        }
        let head = take(4)?;
        if head[0] as usize != T::BYTES {
            return Err(NnError::Checkpoint(format!(
                "scalar width {} does not match {}",
                head[0],
                T::BYTES
            )));
        }
        let output = match head[1] {
            0 => OutputActivation::Linear,
            1 => OutputActivation::Logistic,
            _ => return Err(bad("unknown output activation")),
        };
        let n = u32_at(take(4)?) as usize;
        if n < 2 {
            return Err(bad("fewer than two layer widths"));
        }
        let mut widths = Vec::with_capacity(n);
        for _ in 0..n {
            widths.push(u32_at(take(4)?) as usize);
        }
        if widths.contains(&0) {
            return Err(bad("zero layer width"));
        }
        let count = Self::param_count_for(&widths);
        let raw = take(count * T::BYTES)?;
        let params = raw.chunks_exact(T::BYTES).map(T::read_le).collect();
        if !cur.is_empty() {
            return Err(bad("trailing bytes"));
        }
        Ok(Self {
            widths,
            output,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

/// `θ′ ← τθ + (1−τ)θ′`, elementwise.
pub fn soft_update<T: Scalar>(
    target: &mut DenseNet<T>,
    main: &DenseNet<T>,
    tau: T,
) -> Result<(), NnError> {
    if !target.same_architecture(main) {
        return Err(NnError::ArchitectureMismatch);
    }
    let keep = T::one() - tau;
    for (t, m) in target.params.iter_mut().zip(&main.params) {
        *t = tau * *m + keep * *t;
    }
    Ok(())
}

pub fn hard_update<T: Scalar>(target: &mut DenseNet<T>, main: &DenseNet<T>) -> Result<(), NnError> {
    if !target.same_architecture(main) {
        return Err(NnError::ArchitectureMismatch);
    }
    target.params.copy_from_slice(&main.params);
    Ok(())
}

/// Rescales `grads` so that its L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm<T: Scalar>(grads: &mut [T], max_norm: T) -> T {
    let norm = grads.iter().map(|g| *g * *g).sum::<T>().sqrt();
    if norm > max_norm && norm > T::zero() {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            *g *= s;
        }
    }
    norm
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Bias-corrected Adam moments for one parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    m: Vec<T>,
    v: Vec<T>,
    t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(param_count: usize, config: AdamConfig) -> Self {
        Self {
            config,
            m: vec![T::zero(); param_count],
            v: vec![T::zero(); param_count],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self) -> &[T] {
        &self.m
    }

    pub fn second_moment(&self) -> &[T] {
        &self.v
    }

    /// One descent step `θ ← θ − lr·m̂/(√v̂ + ε)`.
    pub fn step(&mut self, params: &mut [T], grads: &[T]) -> Result<(), NnError> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(NnError::Shape {
                expected: self.m.len(),
                got: params.len().min(grads.len()),
            });
        }
        self.t += 1;
        let c = &self.config;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
        let bc1 = T::one() - T::of(c.beta1.powi(self.t.min(i32::MAX as u64) as i32));
        let bc2 = T::one() - T::of(c.beta2.powi(self.t.min(i32::MAX as u64) as i32));
        let lr = T::of(c.learning_rate);
        let eps = T::of(c.epsilon);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + one_b1 * g;
            self.v[i] = b2 * self.v[i] + one_b2 * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

/// One stored experience.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition<T, A> {
    pub state: Vec<T>,
    pub action: A,
    pub reward: T,
    pub next_state: Vec<T>,
}

/// Fixed-capacity FIFO experience store with uniform minibatch sampling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer<E> {
    capacity: usize,
    items: Vec<E>,
    /// Slot that the next push overwrites once the ring is full.
    cursor: usize,
}

impl<E> ReplayBuffer<E> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            items: Vec::with_capacity(capacity),
            cursor: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, item: E) {
        if self.items.len() < self.capacity {
            self.items.push(item);
        } else {
            self.items[self.cursor] = item;
            self.cursor = (self.cursor + 1) % self.capacity;
        }
    }

    /// Oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &E> {
        let (newer, older) = self.items.split_at(self.cursor);
        older.iter().chain(newer.iter())
    }

    /// `batch` distinct stored items chosen uniformly, or `None` when fewer
    /// than `batch` are stored.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Option<Vec<&E>> {
        if batch == 0 || self.items.len() < batch {
            return None;
        }
        let idx = rand::seq::index::sample(rng, self.items.len(), batch);
        Some(idx.into_iter().map(|i| &self.items[i]).collect())
    }
}
