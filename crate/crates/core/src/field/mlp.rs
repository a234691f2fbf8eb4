//! Tiny decoder MLP: tri-plane features → density, features ⊕ SH → color.
//!
//! ```text
//! h1 = silu(W1·f + b1)        h2 = silu(W2·h1 + b2)
//! σ  = softplus(w_σ·h2 + b_σ)
//! c  = sigmoid(W_c·[h2; sh] + b_c)
//! ```

use rand::Rng;

use crate::error::ensure;
use crate::rng::rng_for;
use crate::scalar::{sigmoid, silu, silu_grad, softplus};
use crate::{Result, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MlpShape {
    pub input: usize,
    pub hidden: usize,
    pub sh: usize,
}

impl MlpShape {
    fn color_in(&self) -> usize {
        self.hidden + self.sh
    }

    fn offsets(&self) -> MlpOffsets {
        let (i, h) = (self.input, self.hidden);
        let w1 = 0;
        let b1 = w1 + h * i;
        let w2 = b1 + h;
        let b2 = w2 + h * h;
        let wd = b2 + h;
        let bd = wd + h;
        let wc = bd + 1;
        let bc = wc + 3 * self.color_in();
        MlpOffsets {
            w1,
            b1,
            w2,
            b2,
            wd,
            bd,
            wc,
            bc,
            total: bc + 3,
        }
    }

    pub fn param_count(&self) -> usize {
        self.offsets().total
    }
}

#[derive(Clone, Copy, Debug)]
struct MlpOffsets {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    wd: usize,
    bd: usize,
    wc: usize,
    bc: usize,
    total: usize,
}

/// Decoder parameters in one flat vector.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpDecoder<T> {
    pub shape: MlpShape,
    pub params: Vec<T>,
}

/// Activations kept from the forward pass for [`MlpDecoder::backward`].
#[derive(Clone, Debug, Default)]
pub struct MlpCache<T> {
    z1: Vec<T>,
    h1: Vec<T>,
    z2: Vec<T>,
    h2: Vec<T>,
    zd: T,
    rgb: [T; 3],
}

impl<T: Scalar> MlpCache<T> {
    pub fn new(shape: &MlpShape) -> Self {
        let h = shape.hidden;
        Self {
            z1: vec![T::zero(); h],
            h1: vec![T::zero(); h],
            z2: vec![T::zero(); h],
            h2: vec![T::zero(); h],
            zd: T::zero(),
            rgb: [T::zero(); 3],
        }
    }
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (x, y) in a.iter().zip(b) {
        acc += *x * *y;
    }
    acc
}

#[inline]
fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * *xi;
    }
}

impl<T: Scalar> MlpDecoder<T> {
    pub fn zeros(shape: MlpShape) -> Self {
        Self {
            shape,
            params: vec![T::zero(); shape.param_count()],
        }
    }

    /// Xavier-uniform weights, zero biases.
    pub fn init(shape: MlpShape, seed: u64) -> Self {
        let mut dec = Self::zeros(shape);
        let o = shape.offsets();
        let mut rng = rng_for(seed, &[0x4d4c50]);
        let mut fill = |range: std::ops::Range<usize>, fan_in: usize, fan_out: usize, params: &mut [T]| {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for p in &mut params[range] {
                *p = T::lit(rng.gen_range(-bound..bound));
            }
        };
        let (i, h, ci) = (shape.input, shape.hidden, shape.color_in());
        fill(o.w1..o.b1, i, h, &mut dec.params);
        fill(o.w2..o.b2, h, h, &mut dec.params);
        fill(o.wd..o.bd, h, 1, &mut dec.params);
        fill(o.wc..o.bc, ci, 3, &mut dec.params);
        dec
    }

    /// Forward pass recording activations. Inputs are not checked.
    pub fn forward(&self, features: &[T], sh: &[T], cache: &mut MlpCache<T>) -> (T, [T; 3]) {
        let s = &self.shape;
        let o = s.offsets();
        let p = &self.params;
        let (i, h) = (s.input, s.hidden);
        for r in 0..h {
            let z = dot(&p[o.w1 + r * i..o.w1 + (r + 1) * i], features) + p[o.b1 + r];
            cache.z1[r] = z;
            cache.h1[r] = silu(z);
        }
        for r in 0..h {
            let z = dot(&p[o.w2 + r * h..o.w2 + (r + 1) * h], &cache.h1) + p[o.b2 + r];
            cache.z2[r] = z;
            cache.h2[r] = silu(z);
        }
        cache.zd = dot(&p[o.wd..o.wd + h], &cache.h2) + p[o.bd];
        let ci = s.color_in();
        for c in 0..3 {
            let row = &p[o.wc + c * ci..o.wc + (c + 1) * ci];
            let z = dot(&row[..h], &cache.h2) + dot(&row[h..], sh) + p[o.bc + c];
            cache.rgb[c] = sigmoid(z);
        }
        (softplus(cache.zd), cache.rgb)
    }

    /// Checked decode of one sample.
    pub fn decode(&self, features: &[T], sh: &[T]) -> Result<(T, [T; 3])> {
        ensure!(
            features.len() == self.shape.input && sh.len() == self.shape.sh,
            Input,
            "decoder expects {} features and {} SH values, got {} and {}",
            self.shape.input,
            self.shape.sh,
            features.len(),
            sh.len()
        );
        ensure!(
            features.iter().chain(sh).all(|v| v.is_finite()),
            Numeric,
            "non-finite decoder input"
        );
        let mut cache = MlpCache::new(&self.shape);
        Ok(self.forward(features, sh, &mut cache))
    }

    /// Accumulates parameter gradients into `grad` and writes the feature
    /// gradient into `d_features` (overwritten).
    pub fn backward(
        &self,
        features: &[T],
        sh: &[T],
        cache: &MlpCache<T>,
        d_density: T,
        d_rgb: [T; 3],
        grad: &mut [T],
        d_features: &mut [T],
        scratch: &mut Vec<T>,
    ) {
        let s = &self.shape;
        let o = s.offsets();
        let p = &self.params;
        let (i, h, ci) = (s.input, s.hidden, s.color_in());
        scratch.clear();
        scratch.resize(2 * h, T::zero());
        let (dh2, dh1) = scratch.split_at_mut(h);

        // density head
        let dzd = d_density * sigmoid(cache.zd);
        axpy(dzd, &cache.h2, &mut grad[o.wd..o.wd + h]);
        grad[o.bd] += dzd;
        axpy(dzd, &p[o.wd..o.wd + h], dh2);

        // color head
        for c in 0..3 {
            let y = cache.rgb[c];
            let dz = d_rgb[c] * y * (T::one() - y);
            if dz == T::zero() {
                continue;
            }
            let row = o.wc + c * ci;
            axpy(dz, &cache.h2, &mut grad[row..row + h]);
            axpy(dz, sh, &mut grad[row + h..row + ci]);
            grad[o.bc + c] += dz;
            axpy(dz, &p[row..row + h], dh2);
        }

        // layer 2
        for r in 0..h {
            let dz = dh2[r] * silu_grad(cache.z2[r]);
            axpy(dz, &cache.h1, &mut grad[o.w2 + r * h..o.w2 + (r + 1) * h]);
            grad[o.b2 + r] += dz;
            axpy(dz, &p[o.w2 + r * h..o.w2 + (r + 1) * h], dh1);
        }

        // layer 1
        d_features.iter_mut().for_each(|v| *v = T::zero());
        for r in 0..h {
            let dz = dh1[r] * silu_grad(cache.z1[r]);
            axpy(dz, features, &mut grad[o.w1 + r * i..o.w1 + (r + 1) * i]);
            grad[o.b1 + r] += dz;
            axpy(dz, &p[o.w1 + r * i..o.w1 + (r + 1) * i], d_features);
        }
    }
}
