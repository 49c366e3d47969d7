use crate::instances::coverage;

/// A measurement whose elements are all diagonal in the computational basis.
///
/// Element `i >= 1` has weight `1/α` on the positions of the `i`-th set and
/// zero elsewhere; element `0` is the residual `1 - cover(t)/α`. Weights are
/// kept as integer numerators over the common denominator `α`, so
/// completeness holds exactly.
#[derive(Clone, Debug)]
pub struct DiagonalPovm {
    alpha: u32,
    cover: Vec<u32>,
    // Owners of each position in CSR form, 1-based set indices.
    owner_start: Vec<usize>,
    owners: Vec<u32>,
    sets: usize,
}

impl DiagonalPovm {
    /// Build the measurement for `sets` over the universe `[0, universe)`.
    pub fn new(sets: &[Vec<u32>], universe: usize) -> Self {
        let cover = coverage(sets, universe);
        let alpha = cover.iter().copied().max().unwrap_or(0).max(1);
        let mut owner_start = vec![0usize; universe + 1];
        for (t, &c) in cover.iter().enumerate() {
            owner_start[t + 1] = owner_start[t] + c as usize;
        }
        let mut fill = owner_start.clone();
        let mut owners = vec![0u32; owner_start[universe]];
        for (i, s) in sets.iter().enumerate() {
            for &e in s {
                owners[fill[e as usize]] = i as u32 + 1;
                fill[e as usize] += 1;
            }
        }
        DiagonalPovm {
            alpha,
            cover,
            owner_start,
            owners,
            sets: sets.len(),
        }
    }

    /// Common denominator `α` (the multiplicity, at least 1).
    pub fn alpha(&self) -> u32 {
        self.alpha
    }

    /// Number of elements, including the residual.
    pub fn len(&self) -> usize {
        self.sets + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn universe(&self) -> usize {
        self.cover.len()
    }

    /// Sets (1-based) containing position `t`.
    pub fn owners(&self, t: usize) -> &[u32] {
        &self.owners[self.owner_start[t]..self.owner_start[t + 1]]
    }

    /// Numerator of element `i` at position `t`.
    pub fn numerator(&self, i: usize, t: usize) -> u32 {
        if i == 0 {
            self.alpha - self.cover[t]
        } else if self.owners(t).contains(&(i as u32)) {
            1
        } else {
            0
        }
    }

    /// Weight of element `i` at position `t`.
    pub fn weight(&self, i: usize, t: usize) -> f64 {
        self.numerator(i, t) as f64 / self.alpha as f64
    }

    /// Elements with non-zero weight at `t`, with their numerators.
    pub fn support_at(&self, t: usize) -> impl Iterator<Item = (usize, u32)> + '_ {
        let resid = self.alpha - self.cover[t];
        let residual = (resid > 0).then_some((0usize, resid));
        residual
            .into_iter()
            .chain(self.owners(t).iter().map(|&i| (i as usize, 1)))
    }

    /// Full weight vector of element `i`.
    pub fn weights(&self, i: usize) -> Vec<f64> {
        (0..self.universe()).map(|t| self.weight(i, t)).collect()
    }

    /// Exact completeness: the numerators at every position sum to `α`.
    pub fn is_complete(&self) -> bool {
        (0..self.universe()).all(|t| {
            let total: u32 = self.support_at(t).map(|(_, w)| w).sum();
            total == self.alpha && self.numerator(0, t) <= self.alpha
        })
    }
}
