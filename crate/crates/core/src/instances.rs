//! Problem instances: Alice's row sets `x`, Bob's column sets `y`, the cells
//! `x_i ∩ y_j`, the input promises, and the two input distributions.
//!
//! Rows and columns are addressed `1..=n` at the public surface; index `0`
//! is reserved for the "no outcome" measurement symbol. Universe elements
//! are 0-based integers in `[0, 4n^2)`.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gf2m::universe_bits;

/// Largest supported `n` (keeps `4n^2` inside `u32`).
pub const MAX_N: usize = 1 << 15;

/// A pair of `n`-tuples of `n`-element subsets of `[0, 4n^2)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Instance {
    n: usize,
    x: Vec<Vec<u32>>,
    y: Vec<Vec<u32>>,
}

fn check_n(n: usize) -> Result<()> {
    if n < 2 || !n.is_power_of_two() || n > MAX_N {
        return Err(Error::usage(format!(
            "n={n} must be a power of two in 2..={MAX_N}"
        )));
    }
    Ok(())
}

fn validate_sets(n: usize, sets: &[Vec<u32>], side: &str) -> Result<()> {
    let universe = (4 * n * n) as u64;
    if sets.len() != n {
        return Err(Error::parse(side, format!("expected {n} sets, found {}", sets.len())));
    }
    for (i, set) in sets.iter().enumerate() {
        if set.len() != n {
            return Err(Error::parse(
                format!("{side}[{i}]"),
                format!("expected {n} elements, found {}", set.len()),
            ));
        }
        for (k, &e) in set.iter().enumerate() {
            if e as u64 >= universe {
                return Err(Error::parse(
                    format!("{side}[{i}][{k}]"),
                    format!("element {e} outside [0, {universe})"),
                ));
            }
            if k > 0 {
                let prev = set[k - 1];
                if prev == e {
                    return Err(Error::parse(format!("{side}[{i}][{k}]"), format!("duplicate element {e}")));
                }
                if prev > e {
                    return Err(Error::parse(format!("{side}[{i}][{k}]"), "elements not sorted ascending"));
                }
            }
        }
    }
    Ok(())
}

impl Instance {
    /// Build an instance, validating shape and sorting each set.
    pub fn new(n: usize, mut x: Vec<Vec<u32>>, mut y: Vec<Vec<u32>>) -> Result<Self> {
        check_n(n)?;
        for s in x.iter_mut().chain(y.iter_mut()) {
            s.sort_unstable();
        }
        validate_sets(n, &x, "x")?;
        validate_sets(n, &y, "y")?;
        Ok(Instance { n, x, y })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Universe size `4n^2`.
    pub fn universe(&self) -> usize {
        4 * self.n * self.n
    }

    /// Vector width `m = log2(4n^2)`.
    pub fn bits(&self) -> u32 {
        universe_bits(self.n).expect("validated at construction")
    }

    /// Alice's sets, 0-based storage.
    pub fn rows(&self) -> &[Vec<u32>] {
        &self.x
    }

    /// Bob's sets, 0-based storage.
    pub fn cols(&self) -> &[Vec<u32>] {
        &self.y
    }

    fn check_index(&self, k: usize, what: &str) -> Result<()> {
        if k == 0 || k > self.n {
            return Err(Error::usage(format!("{what} index {k} outside 1..={}", self.n)));
        }
        Ok(())
    }

    /// The cell `x_i ∩ y_j` for 1-based `i`, `j`.
    pub fn cell(&self, i: usize, j: usize) -> Result<Vec<u32>> {
        self.check_index(i, "row")?;
        self.check_index(j, "column")?;
        Ok(intersect_sorted(&self.x[i - 1], &self.y[j - 1]))
    }

    /// Per-element coverage counts and the sparse cell map.
    pub fn index(&self) -> CellIndex {
        CellIndex::build(self)
    }

    /// Canonical JSON encoding (single line, trailing newline).
    pub fn to_json(&self) -> String {
        let file = InstanceFile {
            n: self.n as u64,
            x: self.x.iter().map(|s| s.iter().map(|&e| e as u64).collect()).collect(),
            y: self.y.iter().map(|s| s.iter().map(|&e| e as u64).collect()).collect(),
        };
        let mut s = serde_json::to_string(&file).expect("plain data serializes");
        s.push('\n');
        s
    }

    /// Parse the canonical JSON encoding. Inner lists must already be sorted.
    pub fn from_json(input: &[u8]) -> Result<Self> {
        let file: InstanceFile = serde_json::from_slice(input).map_err(|e| {
            Error::parse(format!("line {} column {}", e.line(), e.column()), e.to_string())
        })?;
        let n = usize::try_from(file.n).map_err(|_| Error::parse("n", "too large"))?;
        if n < 2 || !n.is_power_of_two() || n > MAX_N {
            return Err(Error::parse("n", format!("n={n} must be a power of two in 2..={MAX_N}")));
        }
        let universe = (4 * n * n) as u64;
        let convert = |sets: Vec<Vec<u64>>, side: &str| -> Result<Vec<Vec<u32>>> {
            sets.into_iter()
                .enumerate()
                .map(|(i, s)| {
                    s.into_iter()
                        .enumerate()
                        .map(|(k, e)| {
                            if e >= universe {
                                Err(Error::parse(
                                    format!("{side}[{i}][{k}]"),
                                    format!("element {e} outside [0, {universe})"),
                                ))
                            } else {
                                Ok(e as u32)
                            }
                        })
                        .collect()
                })
                .collect()
        };
        let x = convert(file.x, "x")?;
        let y = convert(file.y, "y")?;
        validate_sets(n, &x, "x")?;
        validate_sets(n, &y, "y")?;
        Ok(Instance { n, x, y })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceFile {
    n: u64,
    x: Vec<Vec<u64>>,
    y: Vec<Vec<u64>>,
}

/// Intersection of two ascending slices.
pub fn intersect_sorted(a: &[u32], b: &[u32]) -> Vec<u32> {
    let (mut p, mut q) = (0, 0);
    let mut out = Vec::new();
    while p < a.len() && q < b.len() {
        match a[p].cmp(&b[q]) {
            std::cmp::Ordering::Less => p += 1,
            std::cmp::Ordering::Greater => q += 1,
            std::cmp::Ordering::Equal => {
                out.push(a[p]);
                p += 1;
                q += 1;
            }
        }
    }
    out
}

/// Coverage counts for every universe element, indexed by element.
pub fn coverage(sets: &[Vec<u32>], universe: usize) -> Vec<u32> {
    let mut cover = vec![0u32; universe];
    for s in sets {
        for &e in s {
            cover[e as usize] += 1;
        }
    }
    cover
}

/// The largest number of sets sharing one universe element.
pub fn alpha(sets: &[Vec<u32>], universe: usize) -> u32 {
    coverage(sets, universe).into_iter().max().unwrap_or(0)
}

/// A non-empty cell with 1-based coordinates.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Cell {
    pub i: u32,
    pub j: u32,
    pub elems: Vec<u32>,
}

/// Inverted index over an instance: which rows/columns hold each element,
/// and every non-empty cell.
#[derive(Clone, Debug)]
pub struct CellIndex {
    pub cover_x: Vec<u32>,
    pub cover_y: Vec<u32>,
    pub alpha_x: u32,
    pub alpha_y: u32,
    /// Non-empty cells sorted by `(i, j)`.
    pub cells: Vec<Cell>,
    lookup: HashMap<(u32, u32), usize>,
}

impl CellIndex {
    fn build(inst: &Instance) -> Self {
        let universe = inst.universe();
        let cover_x = coverage(&inst.x, universe);
        let cover_y = coverage(&inst.y, universe);
        let alpha_x = cover_x.iter().copied().max().unwrap_or(0);
        let alpha_y = cover_y.iter().copied().max().unwrap_or(0);

        // Row lists per element in CSR form.
        let mut start = vec![0usize; universe + 1];
        for (t, &c) in cover_x.iter().enumerate() {
            start[t + 1] = start[t] + c as usize;
        }
        let mut fill = start.clone();
        let mut rows_of = vec![0u32; start[universe]];
        for (i, s) in inst.x.iter().enumerate() {
            for &e in s {
                rows_of[fill[e as usize]] = i as u32 + 1;
                fill[e as usize] += 1;
            }
        }

        let mut triples: Vec<(u32, u32, u32)> = Vec::new();
        for (j, s) in inst.y.iter().enumerate() {
            for &e in s {
                let e_us = e as usize;
                for &i in &rows_of[start[e_us]..start[e_us + 1]] {
                    triples.push((i, j as u32 + 1, e));
                }
            }
        }
        triples.sort_unstable();

        let mut cells: Vec<Cell> = Vec::new();
        for (i, j, e) in triples {
            match cells.last_mut() {
                Some(c) if c.i == i && c.j == j => c.elems.push(e),
                _ => cells.push(Cell { i, j, elems: vec![e] }),
            }
        }
        let lookup = cells
            .iter()
            .enumerate()
            .map(|(k, c)| ((c.i, c.j), k))
            .collect();
        CellIndex {
            cover_x,
            cover_y,
            alpha_x,
            alpha_y,
            cells,
            lookup,
        }
    }

    /// Size of cell `(i, j)` (1-based); zero for empty or out-of-range cells.
    pub fn cell_size(&self, i: u32, j: u32) -> usize {
        self.lookup.get(&(i, j)).map_or(0, |&k| self.cells[k].elems.len())
    }

    /// Elements of cell `(i, j)` (1-based); empty when the cell is empty.
    pub fn cell(&self, i: u32, j: u32) -> &[u32] {
        self.lookup.get(&(i, j)).map_or(&[], |&k| &self.cells[k].elems)
    }

    pub fn two_cells(&self) -> usize {
        self.cells.iter().filter(|c| c.elems.len() == 2).count()
    }

    pub fn total_mass(&self) -> usize {
        self.cells.iter().map(|c| c.elems.len()).sum()
    }
}

/// Which of the three input promises an instance meets.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PromiseReport {
    pub n: usize,
    /// Number of cells of size exactly 2.
    pub two_cells: usize,
    /// Smallest admissible two-cell count, `ceil(n^2 / 65)`.
    pub two_cells_min: usize,
    /// `max_a |{i : a ∈ x_i or a ∈ y_i}|`.
    pub max_mult: u32,
    /// `floor(4 sqrt(log2 n))`.
    pub max_mult_bound: u32,
    /// `Σ_{i,j} |cell(i, j)|`.
    pub total_cell_mass: usize,
    /// `2 n^2`.
    pub mass_bound: usize,
    pub two_cells_ok: bool,
    pub mult_ok: bool,
    pub mass_ok: bool,
    pub ok: bool,
}

/// The promise that failed, for sampler diagnostics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Promise {
    TwoCells,
    Multiplicity,
    Mass,
}

impl std::fmt::Display for Promise {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Promise::TwoCells => "two-cell count >= n^2/65",
            Promise::Multiplicity => "element multiplicity <= 4 sqrt(log n)",
            Promise::Mass => "total cell mass <= 2 n^2",
        })
    }
}

impl PromiseReport {
    pub fn failures(&self) -> Vec<Promise> {
        let mut out = Vec::new();
        if !self.two_cells_ok {
            out.push(Promise::TwoCells);
        }
        if !self.mult_ok {
            out.push(Promise::Multiplicity);
        }
        if !self.mass_ok {
            out.push(Promise::Mass);
        }
        out
    }
}

/// `max_a |{i : a ∈ x_i or a ∈ y_i}|`, counting an index once when both
/// `x_i` and `y_i` contain `a`.
pub fn joint_multiplicity(inst: &Instance) -> u32 {
    let mut count = vec![0u32; inst.universe()];
    for (xi, yi) in inst.x.iter().zip(&inst.y) {
        let (mut p, mut q) = (0, 0);
        while p < xi.len() || q < yi.len() {
            let e = match (xi.get(p), yi.get(q)) {
                (Some(&a), Some(&b)) if a == b => {
                    p += 1;
                    q += 1;
                    a
                }
                (Some(&a), Some(&b)) if a < b => {
                    p += 1;
                    a
                }
                (Some(_), Some(&b)) => {
                    q += 1;
                    b
                }
                (Some(&a), None) => {
                    p += 1;
                    a
                }
                (None, Some(&b)) => {
                    q += 1;
                    b
                }
                (None, None) => unreachable!(),
            };
            count[e as usize] += 1;
        }
    }
    count.into_iter().max().unwrap_or(0)
}

/// Evaluate the three input promises.
pub fn check_promises(inst: &Instance) -> PromiseReport {
    let idx = inst.index();
    check_promises_indexed(inst, &idx)
}

/// As [`check_promises`], reusing a prebuilt index.
pub fn check_promises_indexed(inst: &Instance, idx: &CellIndex) -> PromiseReport {
    let n = inst.n;
    let log_n = n.trailing_zeros() as u64;
    let two_cells = idx.two_cells();
    let total_cell_mass = idx.total_mass();
    let max_mult = joint_multiplicity(inst);

    // Exact integer forms: 65·#2cells >= n^2, mult^2 <= 16 log n, mass <= 2n^2.
    let two_cells_ok = 65 * two_cells >= n * n;
    let mult_ok = (max_mult as u64).pow(2) <= 16 * log_n;
    let mass_ok = total_cell_mass <= 2 * n * n;
    let max_mult_bound = (0..).take_while(|k: &u64| k * k <= 16 * log_n).last().unwrap_or(0) as u32;

    PromiseReport {
        n,
        two_cells,
        two_cells_min: (n * n).div_ceil(65),
        max_mult,
        max_mult_bound,
        total_cell_mass,
        mass_bound: 2 * n * n,
        two_cells_ok,
        mult_ok,
        mass_ok,
        ok: two_cells_ok && mult_ok && mass_ok,
    }
}

fn sample_set<R: Rng + ?Sized>(rng: &mut R, universe: usize, n: usize) -> Vec<u32> {
    let mut s: Vec<u32> = rand::seq::index::sample(rng, universe, n)
        .into_iter()
        .map(|e| e as u32)
        .collect();
    s.sort_unstable();
    s
}

/// Draw from the product distribution: all `2n` sets independent and
/// uniform among `n`-subsets of `[0, 4n^2)`.
pub fn sample_product<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Instance> {
    check_n(n)?;
    let universe = 4 * n * n;
    let x = (0..n).map(|_| sample_set(rng, universe, n)).collect();
    let y = (0..n).map(|_| sample_set(rng, universe, n)).collect();
    Ok(Instance { n, x, y })
}

/// Outcome of a rejection-sampling run.
#[derive(Clone, Debug)]
pub struct PromisedSample {
    pub instance: Instance,
    /// Number of product draws consumed, including the accepted one.
    pub tries: usize,
}

/// Rejection-sample the promise-restricted distribution.
pub fn sample_promised<R: Rng + ?Sized>(n: usize, rng: &mut R, max_tries: usize) -> Result<Instance> {
    sample_promised_counted(n, rng, max_tries).map(|s| s.instance)
}

/// As [`sample_promised`], also reporting the number of draws used.
pub fn sample_promised_counted<R: Rng + ?Sized>(
    n: usize,
    rng: &mut R,
    max_tries: usize,
) -> Result<PromisedSample> {
    check_n(n)?;
    if max_tries == 0 {
        return Err(Error::usage("max_tries must be at least 1"));
    }
    let mut violations: HashMap<Promise, usize> = HashMap::new();
    for tries in 1..=max_tries {
        let inst = sample_product(n, rng)?;
        let report = check_promises(&inst);
        if report.ok {
            return Ok(PromisedSample { instance: inst, tries });
        }
        for p in report.failures() {
            *violations.entry(p).or_default() += 1;
        }
    }
    let worst = [Promise::TwoCells, Promise::Multiplicity, Promise::Mass]
        .into_iter()
        .max_by_key(|p| violations.get(p).copied().unwrap_or(0))
        .expect("non-empty");
    Err(Error::data(format!(
        "no promised instance at n={n} after {max_tries} tries; most violated promise: {worst} ({} of {max_tries} draws)",
        violations.get(&worst).copied().unwrap_or(0)
    )))
}
