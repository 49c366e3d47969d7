use num_complex::Complex64;
use rand::Rng;

use super::povm::DiagonalPovm;
use crate::error::{Error, Result};
use crate::gf2m::{universe_bits, Gf2Vec};
use crate::walsh::fwht;

const NORM_FLOOR: f64 = 1e-9;

/// Storage layout of a two-register state `Σ ψ(t1, t2) |t1⟩|t2⟩`.
#[derive(Clone, Debug, PartialEq)]
enum Repr {
    /// All `2^m × 2^m` amplitudes, index `t1 · 2^m + t2`.
    Dense(Vec<Complex64>),
    /// `Σ_t c[t] |t⟩|t⟩`.
    PairDiagonal(Vec<Complex64>),
    /// `Σ_{k,l} f[k ⊕ l] |k⟩|l⟩`.
    XorInvariant(Vec<Complex64>),
}

/// A pure state of Alice's and Bob's `m`-qubit registers.
///
/// The protocol's states live in two structured families (supported on the
/// diagonal, or depending only on `k ⊕ l`), which `H^{⊗m} ⊗ H^{⊗m}` maps
/// into each other. Those are stored compactly; anything else is dense.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVec {
    m: u32,
    repr: Repr,
}

impl StateVec {
    /// `(1/2n) Σ_{t ∈ [4n^2]} |t⟩|t⟩`.
    pub fn initial(n: usize) -> Result<Self> {
        let m = universe_bits(n)?;
        let dim = 1usize << m;
        let amp = Complex64::new(1.0 / (2.0 * n as f64), 0.0);
        Ok(StateVec {
            m,
            repr: Repr::PairDiagonal(vec![amp; dim]),
        })
    }

    /// Build a dense state from explicit amplitudes (`t1 · 2^m + t2`).
    pub fn from_dense(m: u32, amps: Vec<Complex64>) -> Result<Self> {
        if amps.len() != 1usize << (2 * m) {
            return Err(Error::usage(format!(
                "dense state needs {} amplitudes, got {}",
                1usize << (2 * m),
                amps.len()
            )));
        }
        Ok(StateVec { m, repr: Repr::Dense(amps) })
    }

    pub fn bits(&self) -> u32 {
        self.m
    }

    fn dim(&self) -> usize {
        1usize << self.m
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.repr, Repr::Dense(_))
    }

    /// Amplitude of `|k⟩|l⟩`.
    pub fn amplitude(&self, k: usize, l: usize) -> Complex64 {
        match &self.repr {
            Repr::Dense(a) => a[k * self.dim() + l],
            Repr::PairDiagonal(c) => {
                if k == l {
                    c[k]
                } else {
                    Complex64::new(0.0, 0.0)
                }
            }
            Repr::XorInvariant(f) => f[k ^ l],
        }
    }

    /// Materialize all `4^m` amplitudes.
    pub fn to_dense(&self) -> StateVec {
        let dim = self.dim();
        let amps = match &self.repr {
            Repr::Dense(a) => a.clone(),
            _ => (0..dim * dim).map(|idx| self.amplitude(idx / dim, idx % dim)).collect(),
        };
        StateVec { m: self.m, repr: Repr::Dense(amps) }
    }

    /// Euclidean norm.
    pub fn norm(&self) -> f64 {
        let sq: f64 = match &self.repr {
            Repr::Dense(a) | Repr::PairDiagonal(a) => a.iter().map(|z| z.norm_sqr()).sum(),
            Repr::XorInvariant(f) => self.dim() as f64 * f.iter().map(|z| z.norm_sqr()).sum::<f64>(),
        };
        sq.sqrt()
    }

    fn scale(&mut self, s: f64) {
        match &mut self.repr {
            Repr::Dense(a) | Repr::PairDiagonal(a) | Repr::XorInvariant(a) => {
                a.iter_mut().for_each(|z| *z *= s)
            }
        }
    }

    /// Joint outcome probabilities `⟨ψ| E_i ⊗ E_j |ψ⟩`, row-major over
    /// `(i, j) ∈ [0, |A|) × [0, |B|)`.
    pub fn povm_probabilities(&self, a: &DiagonalPovm, b: &DiagonalPovm) -> Result<Vec<f64>> {
        self.check_povm(a, b)?;
        let (na, nb) = (a.len(), b.len());
        let scale = 1.0 / (a.alpha() as f64 * b.alpha() as f64);
        let mut probs = vec![0.0; na * nb];
        let mut accumulate = |t1: usize, t2: usize, w: f64| {
            if w == 0.0 {
                return;
            }
            for (i, wa) in a.support_at(t1) {
                for (j, wb) in b.support_at(t2) {
                    probs[i * nb + j] += w * (wa * wb) as f64 * scale;
                }
            }
        };
        match &self.repr {
            Repr::PairDiagonal(c) => {
                for (t, z) in c.iter().enumerate() {
                    accumulate(t, t, z.norm_sqr());
                }
            }
            Repr::Dense(amps) => {
                let dim = self.dim();
                for (idx, z) in amps.iter().enumerate() {
                    accumulate(idx / dim, idx % dim, z.norm_sqr());
                }
            }
            Repr::XorInvariant(_) => return self.to_dense().povm_probabilities(a, b),
        }
        Ok(probs)
    }

    fn check_povm(&self, a: &DiagonalPovm, b: &DiagonalPovm) -> Result<()> {
        if a.universe() != self.dim() || b.universe() != self.dim() {
            return Err(Error::usage("measurement dimension does not match the register"));
        }
        Ok(())
    }

    /// Apply the square-root Kraus operator `√E_i ⊗ √E_j` without
    /// renormalizing. Returns the branch probability and the unnormalized
    /// post-measurement state.
    pub fn apply_kraus(&self, a: &DiagonalPovm, b: &DiagonalPovm, i: usize, j: usize) -> Result<(f64, StateVec)> {
        self.check_povm(a, b)?;
        if i >= a.len() || j >= b.len() {
            return Err(Error::usage(format!("outcome ({i}, {j}) out of range")));
        }
        let root = |p: &DiagonalPovm, e: usize, t: usize| p.weight(e, t).sqrt();
        let repr = match &self.repr {
            Repr::PairDiagonal(c) => Repr::PairDiagonal(
                c.iter()
                    .enumerate()
                    .map(|(t, z)| z * (root(a, i, t) * root(b, j, t)))
                    .collect(),
            ),
            Repr::Dense(amps) => {
                let dim = self.dim();
                Repr::Dense(
                    amps.iter()
                        .enumerate()
                        .map(|(idx, z)| z * (root(a, i, idx / dim) * root(b, j, idx % dim)))
                        .collect(),
                )
            }
            Repr::XorInvariant(_) => return self.to_dense().apply_kraus(a, b, i, j),
        };
        let post = StateVec { m: self.m, repr };
        let norm = post.norm();
        Ok((norm * norm, post))
    }

    /// Measure Alice's register with `a` and Bob's with `b`; returns the
    /// outcomes and the renormalized post-measurement state.
    pub fn measure_povm_pair<R: Rng + ?Sized>(
        &self,
        a: &DiagonalPovm,
        b: &DiagonalPovm,
        rng: &mut R,
    ) -> Result<(usize, usize, StateVec)> {
        let probs = self.povm_probabilities(a, b)?;
        let pick = sample_index(&probs, rng)?;
        let (i, j) = (pick / b.len(), pick % b.len());
        let (p, mut post) = self.apply_kraus(a, b, i, j)?;
        if p.sqrt() < NORM_FLOOR {
            return Err(Error::internal(format!("branch ({i}, {j}) has vanishing norm")));
        }
        post.scale(1.0 / p.sqrt());
        Ok((i, j, post))
    }

    /// `H^{⊗m}` on Alice's register and `H^{⊗m}` on Bob's.
    pub fn hadamard_all(&self) -> StateVec {
        let dim = self.dim();
        let repr = match &self.repr {
            Repr::PairDiagonal(c) => {
                // Σ_t c_t |t t⟩ ↦ 2^{-m} Σ_{k,l} ĉ(k ⊕ l) |k l⟩
                let mut f = c.clone();
                fwht(&mut f);
                let s = 1.0 / dim as f64;
                f.iter_mut().for_each(|z| *z *= s);
                Repr::XorInvariant(f)
            }
            Repr::XorInvariant(f) => {
                // Σ_{k,l} f(k ⊕ l) |k l⟩ ↦ Σ_p f̂(p) |p p⟩
                let mut c = f.clone();
                fwht(&mut c);
                Repr::PairDiagonal(c)
            }
            Repr::Dense(amps) => {
                let mut a = amps.clone();
                let h = std::f64::consts::FRAC_1_SQRT_2;
                for q in 0..2 * self.m {
                    let stride = 1usize << q;
                    for base in 0..a.len() {
                        if base & stride == 0 {
                            let (x, y) = (a[base], a[base | stride]);
                            a[base] = (x + y) * h;
                            a[base | stride] = (x - y) * h;
                        }
                    }
                }
                Repr::Dense(a)
            }
        };
        StateVec { m: self.m, repr }
    }

    /// Computational-basis measurement of both registers.
    pub fn measure_computational<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(Gf2Vec, Gf2Vec)> {
        let dim = self.dim();
        let (k, l) = match &self.repr {
            Repr::Dense(a) => {
                let probs: Vec<f64> = a.iter().map(|z| z.norm_sqr()).collect();
                let idx = sample_index(&probs, rng)?;
                (idx / dim, idx % dim)
            }
            Repr::PairDiagonal(c) => {
                let probs: Vec<f64> = c.iter().map(|z| z.norm_sqr()).collect();
                let t = sample_index(&probs, rng)?;
                (t, t)
            }
            Repr::XorInvariant(f) => {
                let probs: Vec<f64> = f.iter().map(|z| z.norm_sqr()).collect();
                let u = sample_index(&probs, rng)?;
                let k = rng.gen_range(0..dim);
                (k, k ^ u)
            }
        };
        Ok((Gf2Vec::from_raw(k as u64, self.m), Gf2Vec::from_raw(l as u64, self.m)))
    }

    /// Distribution of `k ⊕ l` under a computational-basis measurement,
    /// scaled by `weight`.
    pub fn xor_distribution(&self, weight: f64) -> Vec<f64> {
        let dim = self.dim();
        match &self.repr {
            Repr::XorInvariant(f) => f.iter().map(|z| weight * dim as f64 * z.norm_sqr()).collect(),
            Repr::PairDiagonal(c) => {
                let mut out = vec![0.0; dim];
                out[0] = weight * c.iter().map(|z| z.norm_sqr()).sum::<f64>();
                out
            }
            Repr::Dense(a) => {
                let mut out = vec![0.0; dim];
                for (idx, z) in a.iter().enumerate() {
                    out[(idx / dim) ^ (idx % dim)] += weight * z.norm_sqr();
                }
                out
            }
        }
    }

    /// Probabilities of every `(k, l)`, index `k · 2^m + l`.
    pub fn basis_probabilities(&self) -> Vec<f64> {
        match &self.repr {
            Repr::Dense(a) => a.iter().map(|z| z.norm_sqr()).collect(),
            _ => self.to_dense().basis_probabilities(),
        }
    }
}

/// Sample an index proportionally to non-negative `weights`.
pub(crate) fn sample_index<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> Result<usize> {
    let total: f64 = weights.iter().sum();
    if !total.is_finite() || total <= 0.0 {
        return Err(Error::internal("cannot sample from an all-zero distribution"));
    }
    let mut target = rng.gen::<f64>() * total;
    let mut last = 0;
    for (k, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            if target < w {
                return Ok(k);
            }
            target -= w;
            last = k;
        }
    }
    Ok(last)
}
