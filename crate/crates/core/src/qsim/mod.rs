//! Exact state-vector simulation of one repetition of the protocol:
//! shared maximally entangled state, diagonal POVMs on both sides,
//! Hadamard on every qubit, computational-basis measurement.
//!
//! This module is the ground truth the closed-form sampler in
//! [`crate::analytic`] is checked against.

mod povm;
mod state;

use std::collections::BTreeMap;

use rand::Rng;

pub use povm::DiagonalPovm;
pub use state::StateVec;

use crate::error::{Error, Result};
use crate::gf2m::Gf2Vec;
use crate::instances::Instance;

/// Largest `n` the exact simulator accepts.
pub const MAX_EXACT_N: usize = 16;
/// Largest `n` for which the fully dense `4^m` representation is used.
pub const MAX_DENSE_N: usize = 8;

/// How [`outcome_distribution_exact`] evolves each branch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Enumeration {
    /// Structured (diagonal / xor-invariant) states.
    Structured,
    /// Every amplitude materialized; gates applied qubit by qubit.
    Dense,
}

/// Diagonal measurements for both parties of an instance.
pub fn build_povms(inst: &Instance) -> (DiagonalPovm, DiagonalPovm) {
    let universe = inst.universe();
    (
        DiagonalPovm::new(inst.rows(), universe),
        DiagonalPovm::new(inst.cols(), universe),
    )
}

fn check_size(n: usize, limit: usize) -> Result<()> {
    if n > limit {
        return Err(Error::usage(format!(
            "exact simulation needs n <= {limit} (got n={n}); use the analytic backend for larger n"
        )));
    }
    Ok(())
}

/// One repetition's raw outcome `(i, j, k, l)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RawOutcome {
    pub i: usize,
    pub j: usize,
    pub k: Gf2Vec,
    pub l: Gf2Vec,
}

/// Run one repetition on the exact simulator.
pub fn run_once<R: Rng + ?Sized>(
    inst: &Instance,
    povms: &(DiagonalPovm, DiagonalPovm),
    rng: &mut R,
) -> Result<RawOutcome> {
    check_size(inst.n(), MAX_EXACT_N)?;
    let psi = StateVec::initial(inst.n())?;
    let (i, j, post) = psi.measure_povm_pair(&povms.0, &povms.1, rng)?;
    let (k, l) = post.hadamard_all().measure_computational(rng)?;
    Ok(RawOutcome { i, j, k, l })
}

/// Exact joint distribution of `(i, j, u = k ⊕ l)`.
#[derive(Clone, Debug, PartialEq)]
pub struct OutcomeTable {
    pub n: usize,
    pub m: u32,
    /// Branches with positive probability; each vector is indexed by `u`.
    pub branches: BTreeMap<(u32, u32), Vec<f64>>,
}

impl OutcomeTable {
    pub fn total(&self) -> f64 {
        self.branches.values().flat_map(|v| v.iter()).sum()
    }

    /// Probability of branch `(i, j)` summed over `u`.
    pub fn branch_mass(&self, i: u32, j: u32) -> f64 {
        self.branches.get(&(i, j)).map_or(0.0, |v| v.iter().sum())
    }

    pub fn prob(&self, i: u32, j: u32, u: usize) -> f64 {
        self.branches.get(&(i, j)).map_or(0.0, |v| v[u])
    }

    /// Total-variation distance to another table over the same space.
    pub fn tv_distance(&self, other: &OutcomeTable) -> f64 {
        let dim = 1usize << self.m;
        let zeros = vec![0.0; dim];
        let keys: std::collections::BTreeSet<_> =
            self.branches.keys().chain(other.branches.keys()).collect();
        let sum: f64 = keys
            .into_iter()
            .map(|key| {
                let a = self.branches.get(key).unwrap_or(&zeros);
                let b = other.branches.get(key).unwrap_or(&zeros);
                a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
            })
            .sum();
        0.5 * sum
    }
}

/// Enumerate every measurement branch and every `u` exactly.
pub fn outcome_distribution_exact(inst: &Instance, mode: Enumeration) -> Result<OutcomeTable> {
    let n = inst.n();
    check_size(n, MAX_EXACT_N)?;
    if mode == Enumeration::Dense {
        check_size(n, MAX_DENSE_N)?;
    }
    let povms = build_povms(inst);
    let mut psi = StateVec::initial(n)?;
    if mode == Enumeration::Dense {
        psi = psi.to_dense();
    }
    let probs = psi.povm_probabilities(&povms.0, &povms.1)?;
    let nb = povms.1.len();
    let mut branches = BTreeMap::new();
    for (idx, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        let (i, j) = (idx / nb, idx % nb);
        let (mass, post) = psi.apply_kraus(&povms.0, &povms.1, i, j)?;
        // Evolve the unnormalized branch: weights come out as joint probabilities.
        let evolved = post.hadamard_all();
        let dist = evolved.xor_distribution(1.0);
        debug_assert!((dist.iter().sum::<f64>() - mass).abs() < 1e-9);
        branches.insert((i as u32, j as u32), dist);
    }
    Ok(OutcomeTable {
        n,
        m: inst.bits(),
        branches,
    })
}

/// Exact distribution over `(k, l)` for one branch, index `k · 2^m + l`,
/// conditioned on the branch. Dense sizes only.
pub fn branch_kl_distribution(inst: &Instance, i: usize, j: usize) -> Result<Vec<f64>> {
    check_size(inst.n(), MAX_DENSE_N)?;
    let povms = build_povms(inst);
    let psi = StateVec::initial(inst.n())?.to_dense();
    let (p, post) = psi.apply_kraus(&povms.0, &povms.1, i, j)?;
    if p <= 0.0 {
        return Err(Error::usage(format!("branch ({i}, {j}) has probability zero")));
    }
    Ok(post
        .hadamard_all()
        .basis_probabilities()
        .into_iter()
        .map(|q| q / p)
        .collect())
}

#[cfg(test)]
mod tests {
    use num_complex::Complex64;

    use super::*;
    use crate::gf2m::inner_raw;
    use crate::instances::{sample_promised, CellIndex};
    use crate::rng::stream;

    fn promised(n: usize, seed: u64) -> Instance {
        sample_promised(n, &mut stream(seed, &[]), 10_000).unwrap()
    }

    #[test]
    fn initial_state_amplitudes() {
        let psi = StateVec::initial(2).unwrap();
        assert_eq!(psi.bits(), 4);
        for k in 0..16 {
            for l in 0..16 {
                let a = psi.amplitude(k, l);
                if k == l {
                    assert!((a.re - 0.25).abs() < 1e-15 && a.im == 0.0);
                } else {
                    assert_eq!(a, Complex64::new(0.0, 0.0));
                }
            }
        }
        assert!((psi.norm() - 1.0).abs() < 1e-12);
        assert!((psi.to_dense().norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hadamard_involution_and_unitarity() {
        let inst = promised(4, 1);
        let povms = build_povms(&inst);
        let mut rng = stream(2, &[]);
        for _ in 0..5 {
            let (_, _, post) = StateVec::initial(4).unwrap().measure_povm_pair(&povms.0, &povms.1, &mut rng).unwrap();
            let h = post.hadamard_all();
            assert!((h.norm() - 1.0).abs() < 1e-12);
            let hh = h.hadamard_all();
            let d1 = post.to_dense();
            let d2 = hh.to_dense();
            for k in 0..64 {
                for l in 0..64 {
                    assert!((d1.amplitude(k, l) - d2.amplitude(k, l)).norm() < 1e-12);
                }
            }
            // Dense gate-by-gate path agrees with the structured transform.
            let hd = post.to_dense().hadamard_all();
            for k in 0..64 {
                for l in 0..64 {
                    assert!((hd.amplitude(k, l) - h.amplitude(k, l)).norm() < 1e-12);
                }
            }
            assert!((hd.hadamard_all().norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn hadamard_involution_on_random_dense_state() {
        use rand::Rng;
        let mut rng = stream(3, &[]);
        let amps: Vec<Complex64> = (0..256).map(|_| Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)).collect();
        let norm: f64 = amps.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let amps: Vec<Complex64> = amps.into_iter().map(|z| z / norm).collect();
        let psi = StateVec::from_dense(4, amps).unwrap();
        let back = psi.hadamard_all().hadamard_all();
        assert!((psi.hadamard_all().norm() - 1.0).abs() < 1e-12);
        for k in 0..16 {
            for l in 0..16 {
                assert!((back.amplitude(k, l) - psi.amplitude(k, l)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn branch_probability_matches_cell_formula() {
        for seed in 0..3 {
            let inst = promised(4, 10 + seed);
            let idx: CellIndex = inst.index();
            let povms = build_povms(&inst);
            let probs = StateVec::initial(4).unwrap().povm_probabilities(&povms.0, &povms.1).unwrap();
            let denom = 64.0 * idx.alpha_x as f64 * idx.alpha_y as f64;
            for i in 1..=4u32 {
                for j in 1..=4u32 {
                    let want = idx.cell_size(i, j) as f64 / denom;
                    assert!((probs[i as usize * 5 + j as usize] - want).abs() < 1e-15);
                }
            }
            assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn two_cell_with_unit_alpha_has_probability_one_32nd() {
        // n = 4, pairwise disjoint rows and columns, one 2-cell.
        let x: Vec<Vec<u32>> = (0..4).map(|i| (4 * i..4 * i + 4).collect()).collect();
        let mut y: Vec<Vec<u32>> = (0..4).map(|i| (32 + 4 * i..36 + 4 * i).collect()).collect();
        y[0] = vec![0, 1, 48, 49];
        let inst = Instance::new(4, x, y).unwrap();
        let povms = build_povms(&inst);
        assert_eq!((povms.0.alpha(), povms.1.alpha()), (1, 1));
        let probs = StateVec::initial(4).unwrap().povm_probabilities(&povms.0, &povms.1).unwrap();
        assert!((probs[5 + 1] - 1.0 / 32.0).abs() < 1e-15);
        // Empty cell is never sampled.
        assert_eq!(probs[2 * 5 + 2], 0.0);
        let mut rng = stream(4, &[]);
        for _ in 0..2000 {
            let (i, j, post) = StateVec::initial(4).unwrap().measure_povm_pair(&povms.0, &povms.1, &mut rng).unwrap();
            assert!(probs[i * 5 + j] > 0.0);
            assert!((post.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn post_state_on_cell_is_uniform_superposition() {
        let inst = promised(4, 21);
        let idx = inst.index();
        let povms = build_povms(&inst);
        let psi = StateVec::initial(4).unwrap();
        for cell in &idx.cells {
            let (p, post) = psi.apply_kraus(&povms.0, &povms.1, cell.i as usize, cell.j as usize).unwrap();
            let want = 1.0 / (cell.elems.len() as f64).sqrt();
            for t in 0..64usize {
                let a = post.amplitude(t, t).re / p.sqrt();
                if cell.elems.contains(&(t as u32)) {
                    assert!((a - want).abs() < 1e-12);
                } else {
                    assert!(a.abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn two_cell_amplitudes_follow_interference_pattern() {
        let inst = promised(4, 30);
        let idx = inst.index();
        let cell = idx.cells.iter().find(|c| c.elems.len() == 2).expect("promised instance has a 2-cell");
        let (a, b) = (cell.elems[0] as u64, cell.elems[1] as u64);
        let povms = build_povms(&inst);
        let (p, post) = StateVec::initial(4).unwrap().apply_kraus(&povms.0, &povms.1, cell.i as usize, cell.j as usize).unwrap();
        let h = post.hadamard_all();
        // amplitude(k,l) ∝ (-1)^{<k+l,a>} + (-1)^{<k+l,b>}
        let unit = h.amplitude(0, 0).re / 2.0;
        assert!(unit.abs() > 0.0);
        for k in 0..64u64 {
            for l in 0..64u64 {
                let u = k ^ l;
                let sa = if inner_raw(u, a) == 0 { 1.0 } else { -1.0 };
                let sb = if inner_raw(u, b) == 0 { 1.0 } else { -1.0 };
                let amp = h.amplitude(k as usize, l as usize);
                assert!((amp.re - unit * (sa + sb)).abs() < 1e-12);
                assert!(amp.im.abs() < 1e-15);
            }
        }
        assert!(p > 0.0);
    }

    #[test]
    fn zero_xor_probability_on_two_cell_branch() {
        // Brute force over every (k, l) at m = 6.
        let inst = promised(4, 31);
        let idx = inst.index();
        let cell = idx.cells.iter().find(|c| c.elems.len() == 2).unwrap();
        let kl = branch_kl_distribution(&inst, cell.i as usize, cell.j as usize).unwrap();
        let p0: f64 = (0..64).map(|k| kl[k * 64 + k]).sum();
        assert!((p0 - 2f64.powi(1 - 6)).abs() < 1e-12);
        let s = (cell.elems[0] ^ cell.elems[1]) as u64;
        for k in 0..64u64 {
            for l in 0..64u64 {
                if kl[(k * 64 + l) as usize] > 1e-15 {
                    assert_eq!(inner_raw(k ^ l, s), 0);
                }
            }
        }
    }

    #[test]
    fn measure_computational_respects_hyperplane() {
        let inst = promised(4, 32);
        let idx = inst.index();
        let cell = idx.cells.iter().find(|c| c.elems.len() == 2).unwrap();
        let s = (cell.elems[0] ^ cell.elems[1]) as u64;
        let povms = build_povms(&inst);
        let (p, branch) = StateVec::initial(4).unwrap().apply_kraus(&povms.0, &povms.1, cell.i as usize, cell.j as usize).unwrap();
        assert!(p > 0.0);
        let post = branch.hadamard_all();
        let mut rng = stream(5, &[]);
        let mut counts = vec![0usize; 64];
        let draws = 64_000;
        for _ in 0..draws {
            let (k, l) = post.measure_computational(&mut rng).unwrap();
            let u = k.add(&l).unwrap().index();
            assert_eq!(inner_raw(u, s), 0);
            counts[u as usize] += 1;
        }
        // Uniform on 32 hyperplane points: 2000 each, σ ≈ 44.
        for (u, &c) in counts.iter().enumerate() {
            if inner_raw(u as u64, s) == 0 {
                assert!((c as f64 - 2000.0).abs() < 5.0 * 44.0, "u={u} c={c}");
            }
        }
    }

    #[test]
    fn exact_table_sums_to_one_and_paths_agree() {
        for n in [2usize, 4] {
            for seed in 0..3 {
                let inst = promised(n, 40 + seed);
                let s = outcome_distribution_exact(&inst, Enumeration::Structured).unwrap();
                let d = outcome_distribution_exact(&inst, Enumeration::Dense).unwrap();
                assert!((s.total() - 1.0).abs() < 1e-10);
                assert!((d.total() - 1.0).abs() < 1e-10);
                assert!(s.tv_distance(&d) < 1e-12, "n={n}");
                let idx = inst.index();
                let denom = (4 * n * n) as f64 * idx.alpha_x as f64 * idx.alpha_y as f64;
                for c in &idx.cells {
                    assert!((s.branch_mass(c.i, c.j) - c.elems.len() as f64 / denom).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn size_gate() {
        let inst = crate::instances::sample_product(32, &mut stream(1, &[])).unwrap();
        assert!(matches!(outcome_distribution_exact(&inst, Enumeration::Structured), Err(Error::Usage(_))));
        let inst = crate::instances::sample_product(16, &mut stream(1, &[])).unwrap();
        assert!(outcome_distribution_exact(&inst, Enumeration::Dense).is_err());
    }
}
