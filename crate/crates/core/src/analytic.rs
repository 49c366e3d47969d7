//! Closed-form sampler for one repetition.
//!
//! All states in the protocol are diagonal in the shared basis, so the
//! repetition factorizes:
//!
//! * the branch `(i, j)` has probability `(1/4n^2) Σ_t wA_i[t] wB_j[t]`,
//!   an exact rational with denominator `4n^2 α_x α_y`;
//! * given the branch, `u = k ⊕ l` has law
//!   `P(u) = |Σ_t √(wA_i[t] wB_j[t]) (-1)^{<u,t>}|^2 / (2^m Σ_t wA_i[t] wB_j[t])`;
//! * `k` is uniform and independent of `u`, and `l = k ⊕ u`.
//!
//! The `u` law is checked against [`crate::qsim`] by total-variation distance
//! before it is relied on (see the `xcheck` command and the test suite).

use std::collections::HashMap;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use crate::error::{Error, Result};
use crate::gf2m::{inner_raw, Gf2Vec};
use crate::instances::{CellIndex, Instance};
use crate::qsim::OutcomeTable;
use crate::walsh::fwht;

/// Exact categorical distribution of the measurement branch `(i, j)`.
///
/// Probabilities are `numerator / denom`; zero-probability branches are
/// omitted. Entries are sorted by `(i, j)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BranchTable {
    pub n: usize,
    pub denom: u64,
    pub entries: Vec<(u32, u32, u64)>,
}

impl BranchTable {
    pub fn numerator(&self, i: u32, j: u32) -> u64 {
        self.entries
            .binary_search_by(|&(a, b, _)| (a, b).cmp(&(i, j)))
            .map_or(0, |k| self.entries[k].2)
    }

    pub fn prob(&self, i: u32, j: u32) -> f64 {
        self.numerator(i, j) as f64 / self.denom as f64
    }

    /// Sum of numerators; equals `denom` exactly.
    pub fn total_numerator(&self) -> u64 {
        self.entries.iter().map(|e| e.2).sum()
    }
}

/// Branch distribution for `inst` from its cell index.
pub fn joint_branch_distribution(inst: &Instance, idx: &CellIndex) -> BranchTable {
    let (ax, ay) = (idx.alpha_x as u64, idx.alpha_y as u64);
    let n = inst.n();
    let resid_x = |t: u32| ax - idx.cover_x[t as usize] as u64;
    let resid_y = |t: u32| ay - idx.cover_y[t as usize] as u64;

    let mut entries = Vec::with_capacity(idx.cells.len() + 2 * n + 1);
    let zero_zero: u64 = idx
        .cover_x
        .iter()
        .zip(&idx.cover_y)
        .map(|(&cx, &cy)| (ax - cx as u64) * (ay - cy as u64))
        .sum();
    if zero_zero > 0 {
        entries.push((0, 0, zero_zero));
    }
    for (j, col) in inst.cols().iter().enumerate() {
        let w: u64 = col.iter().map(|&t| resid_x(t)).sum();
        if w > 0 {
            entries.push((0, j as u32 + 1, w));
        }
    }
    let mut cells = idx.cells.iter().peekable();
    for (i, row) in inst.rows().iter().enumerate() {
        let i1 = i as u32 + 1;
        let w: u64 = row.iter().map(|&t| resid_y(t)).sum();
        if w > 0 {
            entries.push((i1, 0, w));
        }
        while let Some(c) = cells.next_if(|c| c.i == i1) {
            entries.push((c.i, c.j, c.elems.len() as u64));
        }
    }
    BranchTable {
        n,
        denom: (4 * n * n) as u64 * ax * ay,
        entries,
    }
}

/// Positions and integer weights `wA_i[t]·wB_j[t]·α_x·α_y` of branch `(i, j)`,
/// sorted by position.
pub fn branch_support(inst: &Instance, idx: &CellIndex, i: u32, j: u32) -> Vec<(u32, u64)> {
    let (ax, ay) = (idx.alpha_x as u64, idx.alpha_y as u64);
    let resid_x = |t: u32| ax - idx.cover_x[t as usize] as u64;
    let resid_y = |t: u32| ay - idx.cover_y[t as usize] as u64;
    let keep = |v: Vec<(u32, u64)>| v.into_iter().filter(|&(_, w)| w > 0).collect();
    match (i, j) {
        (0, 0) => keep(
            (0..inst.universe() as u32)
                .map(|t| (t, resid_x(t) * resid_y(t)))
                .collect(),
        ),
        (0, j) => keep(inst.cols()[j as usize - 1].iter().map(|&t| (t, resid_x(t))).collect()),
        (i, 0) => keep(inst.rows()[i as usize - 1].iter().map(|&t| (t, resid_y(t))).collect()),
        (i, j) => idx.cell(i, j).iter().map(|&t| (t, 1)).collect(),
    }
}

/// Conditional law of `u` on branch `(i, j)` by direct character sums,
/// `O(2^m · s)` for a support of size `s`.
pub fn conditional_u_weights(inst: &Instance, idx: &CellIndex, i: u32, j: u32) -> Result<Vec<f64>> {
    let support = branch_support(inst, idx, i, j);
    if support.is_empty() {
        return Err(Error::usage(format!("branch ({i}, {j}) has probability zero")));
    }
    let dim = 1u64 << inst.bits();
    let mass: f64 = support.iter().map(|&(_, w)| w as f64).sum();
    let amps: Vec<(u64, f64)> = support.iter().map(|&(t, w)| (t as u64, (w as f64).sqrt())).collect();
    Ok((0..dim)
        .map(|u| {
            let s: f64 = amps
                .iter()
                .map(|&(t, a)| if inner_raw(u, t) == 0 { a } else { -a })
                .sum();
            s * s / (dim as f64 * mass)
        })
        .collect())
}

/// The full `(i, j, u)` table from the closed form.
pub fn analytic_outcome_table(inst: &Instance) -> Result<OutcomeTable> {
    let idx = inst.index();
    let table = joint_branch_distribution(inst, &idx);
    let mut branches = std::collections::BTreeMap::new();
    for &(i, j, num) in &table.entries {
        let p = num as f64 / table.denom as f64;
        let cond = conditional_u_weights(inst, &idx, i, j)?;
        branches.insert((i, j), cond.into_iter().map(|q| q * p).collect());
    }
    Ok(OutcomeTable {
        n: inst.n(),
        m: inst.bits(),
        branches,
    })
}

/// How `u` is drawn for one branch.
#[derive(Clone, Debug)]
enum USampler {
    /// Single-point support: every `u` equally likely.
    Uniform,
    /// Two equal-weight points `{a, b}`: uniform on `<u, a ⊕ b> = 0`.
    Hyperplane(u64),
    /// Bit-by-bit marginals over a sparse support, `O(s + m)` per draw.
    Sequential(MergePlan),
    /// Cumulative table over all `2^m` values.
    Table { cumulative: Vec<f64> },
}

/// One repetition's outcome.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Outcome {
    pub i: u32,
    pub j: u32,
    pub k: Gf2Vec,
    pub l: Gf2Vec,
}

impl Outcome {
    /// `t = k + l`, the value the referee reports.
    pub fn t(&self) -> Gf2Vec {
        self.k.add(&self.l).expect("k and l share a width")
    }
}

/// Sampler for repeated draws on one instance. Per-branch `u` samplers are
/// built on first use and cached.
pub struct AnalyticSampler<'a> {
    inst: &'a Instance,
    idx: CellIndex,
    table: BranchTable,
    branch_dist: WeightedIndex<u64>,
    m: u32,
    cache: HashMap<(u32, u32), USampler>,
    scratch: (Vec<f64>, Vec<(f64, f64)>),
}

impl<'a> AnalyticSampler<'a> {
    pub fn new(inst: &'a Instance) -> Self {
        Self::with_index(inst, inst.index())
    }

    pub fn with_index(inst: &'a Instance, idx: CellIndex) -> Self {
        let table = joint_branch_distribution(inst, &idx);
        let branch_dist = WeightedIndex::new(table.entries.iter().map(|e| e.2))
            .expect("branch table has positive total mass");
        AnalyticSampler {
            inst,
            m: inst.bits(),
            idx,
            table,
            branch_dist,
            cache: HashMap::new(),
            scratch: (Vec::new(), Vec::new()),
        }
    }

    pub fn index(&self) -> &CellIndex {
        &self.idx
    }

    pub fn branch_table(&self) -> &BranchTable {
        &self.table
    }

    fn build(&self, i: u32, j: u32) -> Result<USampler> {
        let support = branch_support(self.inst, &self.idx, i, j);
        if support.is_empty() {
            return Err(Error::usage(format!("branch ({i}, {j}) has probability zero")));
        }
        let dim = 1usize << self.m;
        let equal = support.iter().all(|&(_, w)| w == support[0].1);
        Ok(match support.len() {
            1 => USampler::Uniform,
            2 if equal => USampler::Hyperplane((support[0].0 ^ support[1].0) as u64),
            s if (s as u64) * (self.m as u64) >= dim as u64 => {
                let mut amps = vec![0.0f64; dim];
                for &(t, w) in &support {
                    amps[t as usize] = (w as f64).sqrt();
                }
                fwht(&mut amps);
                let mut acc = 0.0;
                let cumulative = amps
                    .into_iter()
                    .map(|a| {
                        acc += a * a;
                        acc
                    })
                    .collect();
                USampler::Table { cumulative }
            }
            _ => {
                let amps: Vec<(u64, f64)> = support.into_iter().map(|(t, w)| (t as u64, (w as f64).sqrt())).collect();
                USampler::Sequential(MergePlan::new(&amps, self.m))
            }
        })
    }

    /// Draw `u = k ⊕ l` conditioned on branch `(i, j)`.
    pub fn sample_u<R: Rng + ?Sized>(&mut self, i: u32, j: u32, rng: &mut R) -> Result<Gf2Vec> {
        if !self.cache.contains_key(&(i, j)) {
            let s = self.build(i, j)?;
            self.cache.insert((i, j), s);
        }
        let m = self.m;
        let dim = 1u64 << m;
        let u = match &self.cache[&(i, j)] {
            USampler::Uniform => rng.gen_range(0..dim),
            USampler::Hyperplane(s) => {
                let mut u = rng.gen_range(0..dim);
                if inner_raw(u, *s) == 1 {
                    // Flip one bit inside supp(s) to land on the hyperplane.
                    u ^= 1u64 << s.trailing_zeros();
                }
                u
            }
            USampler::Table { cumulative } => {
                let total = *cumulative.last().expect("non-empty");
                let target = rng.gen::<f64>() * total;
                cumulative.partition_point(|&c| c <= target).min(cumulative.len() - 1) as u64
            }
            USampler::Sequential(plan) => plan.draw(m, &mut self.scratch.0, &mut self.scratch.1, rng),
        };
        Ok(Gf2Vec::from_raw(u, m))
    }

    /// One full repetition: branch, then `u`, then uniform `k` and `l = k ⊕ u`.
    pub fn run_once<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<Outcome> {
        let (i, j, _) = self.table.entries[self.branch_dist.sample(rng)];
        let u = self.sample_u(i, j, rng)?;
        let k = Gf2Vec::from_raw(rng.gen_range(0..1u64 << self.m), self.m);
        let l = k.add(&u)?;
        Ok(Outcome { i, j, k, l })
    }

    /// Draw only the branch `(i, j)`.
    pub fn sample_branch<R: Rng + ?Sized>(&self, rng: &mut R) -> (u32, u32) {
        let (i, j, _) = self.table.entries[self.branch_dist.sample(rng)];
        (i, j)
    }
}

/// How a sparse support collapses as the bits of `u` are drawn from the
/// lowest up.
///
/// Before bit `r` is drawn, the points fall into groups sharing `t >> r`,
/// each carrying a signed partial sum whose sign is fixed by the low bits of
/// `u` already drawn. By Parseval over the undrawn high bits, the marginal of
/// bit `r` depends only on groups that pair up under `t >> (r + 1)`; a
/// singleton contributes equally to both outcomes. Which groups pair at which
/// level depends on positions alone, so it is worked out once per support.
#[derive(Clone, Debug)]
struct MergePlan {
    amps: Vec<f64>,
    // Per node: a representative position and the level it was formed at.
    // Leaves come first, then one node per merge.
    rep: Vec<u64>,
    level: Vec<u32>,
    merges: Vec<(u32, u32)>,
    level_start: Vec<usize>,
}

impl MergePlan {
    fn new(support: &[(u64, f64)], m: u32) -> Self {
        let s = support.len();
        let mut rep: Vec<u64> = support.iter().map(|e| e.0).collect();
        let mut level = vec![0u32; s];
        let mut merges = Vec::with_capacity(s.saturating_sub(1));
        let mut level_start = Vec::with_capacity(m as usize + 1);
        let mut groups: Vec<u32> = (0..s as u32).collect();
        for r in 0..m {
            level_start.push(merges.len());
            let mut next = Vec::with_capacity(groups.len());
            let mut k = 0;
            while k < groups.len() {
                let g = groups[k];
                match groups.get(k + 1) {
                    Some(&h) if rep[h as usize] >> (r + 1) == rep[g as usize] >> (r + 1) => {
                        merges.push((g, h));
                        next.push((s + merges.len() - 1) as u32);
                        rep.push(rep[g as usize]);
                        level.push(r + 1);
                        k += 2;
                    }
                    _ => {
                        next.push(g);
                        k += 1;
                    }
                }
            }
            groups = next;
        }
        level_start.push(merges.len());
        MergePlan {
            amps: support.iter().map(|e| e.1).collect(),
            rep,
            level,
            merges,
            level_start,
        }
    }

    /// Draw `u` with `P(u) ∝ |Σ_t a_t (-1)^{<u,t>}|^2` in `O(s + m)`.
    fn draw<R: Rng + ?Sized>(&self, m: u32, val: &mut Vec<f64>, pending: &mut Vec<(f64, f64)>, rng: &mut R) -> u64 {
        let s = self.amps.len();
        val.clear();
        val.extend_from_slice(&self.amps);
        let mut sum_sq: f64 = self.amps.iter().map(|a| a * a).sum();
        let mut u = 0u64;
        for r in 0..m {
            let level = &self.merges[self.level_start[r as usize]..self.level_start[r as usize + 1]];
            // Current signed value of a node: its stored value with the signs
            // of the bits drawn since it was formed.
            let current = |g: u32| {
                let g = g as usize;
                let flips = u & self.rep[g] & !((1u64 << self.level[g]) - 1);
                if flips.count_ones() & 1 == 1 {
                    -val[g]
                } else {
                    val[g]
                }
            };
            pending.clear();
            let mut cross = 0.0;
            for &(g, h) in level {
                let (a, b) = (current(g), current(h));
                cross += a * b;
                pending.push((a, b));
            }
            let p_even = sum_sq + 2.0 * cross;
            let total = 2.0 * sum_sq;
            let odd = total > 0.0 && rng.gen::<f64>() * total >= p_even;
            let sign = if odd {
                u |= 1 << r;
                -1.0
            } else {
                1.0
            };
            for &(a, b) in pending.iter() {
                let merged = a + sign * b;
                sum_sq += merged * merged - a * a - b * b;
                val.push(merged);
            }
        }
        debug_assert_eq!(val.len(), 2 * s - 1);
        u
    }
}

/// Exact per-repetition probability that an outcome is a usable answer
/// triple on a 2-cell (`i, j ≠ 0`, `|cell| = 2`, `u ≠ 0`), as
/// `(numerator, denominator)`.
pub fn usable_two_cell_probability(inst: &Instance, idx: &CellIndex) -> (u128, u128) {
    let m = inst.bits();
    let half = 1u128 << (m - 1);
    let d = (4 * inst.n() * inst.n()) as u128 * idx.alpha_x as u128 * idx.alpha_y as u128;
    (2 * idx.two_cells() as u128 * (half - 1), d * half)
}
