//! The simultaneous-message protocol: Alice and Bob each send one message
//! per repetition to a referee, who assembles an answer.
//!
//! One repetition gives Alice `(i, k)` and Bob `(j, l)`. The referee keeps
//! outcomes with `i, j ≠ 0` and `k + l ≠ 0`, drops repeated cells (first
//! occurrence wins), and if at least `t_n` remain outputs `t_n` of them chosen
//! by a selection index; otherwise it abstains.

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::Serialize;

use crate::analytic::{usable_two_cell_probability, AnalyticSampler};
use crate::error::{Error, Result};
use crate::gf2m::Gf2Vec;
use crate::instances::{CellIndex, Instance};
use crate::qsim;
use crate::relations::{check_pnn_indexed, t_n, PnnAnswer, Triple};
use crate::rng::{role, stream};

pub use crate::analytic::Outcome;

/// Which simulator produces repetitions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Exact,
    Analytic,
}

impl std::str::FromStr for Backend {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Backend::Exact),
            "analytic" => Ok(Backend::Analytic),
            _ => Err(Error::usage(format!("unknown backend {s:?} (exact|analytic)"))),
        }
    }
}

impl std::fmt::Display for Backend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Backend::Exact => "exact",
            Backend::Analytic => "analytic",
        })
    }
}

/// How many repetitions to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Repetitions {
    /// Instance-aware: see [`auto_repetitions`].
    Auto,
    /// Instance-blind: see [`fixed_repetitions`].
    FixedRule,
    Count(u64),
}

impl std::str::FromStr for Repetitions {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(Repetitions::Auto),
            "fixed" => Ok(Repetitions::FixedRule),
            _ => s
                .parse::<u64>()
                .map(Repetitions::Count)
                .map_err(|_| Error::usage(format!("repetitions must be auto, fixed, or an integer; got {s:?}"))),
        }
    }
}

impl Repetitions {
    pub fn resolve(&self, inst: &Instance, idx: &CellIndex) -> Result<u64> {
        match *self {
            Repetitions::Auto => auto_repetitions(inst, idx),
            Repetitions::FixedRule => fixed_repetitions(inst.n()),
            Repetitions::Count(r) => Ok(r),
        }
    }
}

/// `R = ceil(4 (t_n + 2) / p*)` where `p*` is the exact per-repetition
/// probability of a usable 2-cell triple, so that `R p* >= 4 (t_n + 2)`.
///
/// Uses knowledge of the instance, which only a simulator has.
pub fn auto_repetitions(inst: &Instance, idx: &CellIndex) -> Result<u64> {
    let (num, den) = usable_two_cell_probability(inst, idx);
    if num == 0 {
        return Err(Error::data("instance has no 2-cells; outside the promise"));
    }
    repetitions_for(t_n(inst.n())?, num, den)
}

/// `ceil(4 (t_n + 2) · den / num)` for `p* = num / den`.
pub fn repetitions_for(tn: usize, num: u128, den: u128) -> Result<u64> {
    if num == 0 {
        return Err(Error::data("usable-triple probability is zero"));
    }
    let target = 4 * (tn as u128 + 2);
    let r = (target * den).div_ceil(num);
    u64::try_from(r).map_err(|_| Error::data("repetition count overflows u64"))
}

/// Instance-blind count `2080 · log2 n · (t_n + 3)`.
pub fn fixed_repetitions(n: usize) -> Result<u64> {
    let tn = t_n(n)? as u64;
    Ok(2080 * n.trailing_zeros() as u64 * (tn + 3))
}

/// Classical communication and entanglement consumed by one protocol run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct CostReport {
    pub classical_bits: u64,
    pub epr_pairs: u64,
    pub repetitions: u64,
}

impl CostReport {
    /// `2 R (ceil(log2(n+1)) + m)` bits and `R m` EPR pairs.
    pub fn formula(n: usize, m: u32, reps: u64) -> Self {
        CostReport {
            classical_bits: 2 * reps * (index_bits(n) as u64 + m as u64),
            epr_pairs: reps * m as u64,
            repetitions: reps,
        }
    }
}

/// Width of an outcome index field: `ceil(log2(n + 1))`.
pub fn index_bits(n: usize) -> u32 {
    usize::BITS - n.leading_zeros()
}

/// One party's message: an `(index, vector)` pair per repetition.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartyMessage {
    pub entries: Vec<(u32, Gf2Vec)>,
}

/// MSB-first bit packer.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BitWriter {
    bytes: Vec<u8>,
    len: u64,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, value: u128, width: u32) {
        for b in (0..width).rev() {
            if self.len.is_multiple_of(8) {
                self.bytes.push(0);
            }
            if value >> b & 1 == 1 {
                *self.bytes.last_mut().expect("pushed above") |= 0x80 >> (self.len % 8);
            }
            self.len += 1;
        }
    }

    pub fn bit_len(&self) -> u64 {
        self.len
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }
}

/// Reader over an MSB-first bit string.
pub struct BitReader<'a> {
    bytes: &'a [u8],
    pos: u64,
}

impl<'a> BitReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        BitReader { bytes, pos: 0 }
    }

    pub fn read(&mut self, width: u32) -> Result<u128> {
        let mut v = 0u128;
        for _ in 0..width {
            let byte = self
                .bytes
                .get((self.pos / 8) as usize)
                .ok_or_else(|| Error::parse(format!("bit {}", self.pos), "message truncated"))?;
            v = (v << 1) | ((byte >> (7 - self.pos % 8)) & 1) as u128;
            self.pos += 1;
        }
        Ok(v)
    }

    pub fn position(&self) -> u64 {
        self.pos
    }

    /// Require the rest of the final byte to be zero padding and nothing after.
    pub fn finish(self) -> Result<()> {
        let total = self.bytes.len() as u64 * 8;
        if total < self.pos || total - self.pos >= 8 {
            return Err(Error::parse(format!("bit {}", self.pos), "trailing bytes after message"));
        }
        let mut r = self;
        while r.pos < total {
            if r.read(1)? != 0 {
                return Err(Error::parse(format!("bit {}", r.pos - 1), "non-zero padding"));
            }
        }
        Ok(())
    }
}

impl PartyMessage {
    /// Serialize with fixed-width fields: `ceil(log2(n+1))` bits of index,
    /// then `m` bits of vector, per entry.
    pub fn encode(&self, n: usize, w: &mut BitWriter) {
        let ib = index_bits(n);
        for (idx, v) in &self.entries {
            w.push(*idx as u128, ib);
            w.push(v.index() as u128, v.width());
        }
    }

    /// Inverse of [`PartyMessage::encode`] for `reps` entries.
    pub fn decode(r: &mut BitReader<'_>, n: usize, m: u32, reps: u64) -> Result<Self> {
        let ib = index_bits(n);
        let mut entries = Vec::with_capacity(reps.min(1 << 20) as usize);
        for _ in 0..reps {
            let at = r.position();
            let idx = r.read(ib)? as u32;
            if idx as usize > n {
                return Err(Error::parse(format!("bit {at}"), format!("index {idx} exceeds n={n}")));
            }
            let v = Gf2Vec::from_raw(r.read(m)? as u64, m);
            entries.push((idx, v));
        }
        Ok(PartyMessage { entries })
    }

    pub fn to_bytes(&self, n: usize) -> (Vec<u8>, u64) {
        let mut w = BitWriter::new();
        self.encode(n, &mut w);
        let len = w.bit_len();
        (w.into_bytes(), len)
    }
}

/// Split outcomes into the two parties' messages.
pub fn party_messages(outcomes: &[Outcome]) -> (PartyMessage, PartyMessage) {
    let alice = outcomes.iter().map(|o| (o.i, o.k)).collect();
    let bob = outcomes.iter().map(|o| (o.j, o.l)).collect();
    (PartyMessage { entries: alice }, PartyMessage { entries: bob })
}

/// `C(a, b)`, or `None` on overflow.
pub fn binomial(a: u64, b: u64) -> Option<u128> {
    if b > a {
        return Some(0);
    }
    let b = b.min(a - b);
    let mut acc: u128 = 1;
    for k in 0..b {
        acc = acc.checked_mul((a - k) as u128)? / (k as u128 + 1);
    }
    Some(acc)
}

/// Width of the referee's selection field: `ceil(log2 C(R, t_n))`.
pub fn selection_bits(reps: u64, tn: usize) -> Result<u32> {
    let c = binomial(reps, tn as u64).ok_or_else(|| Error::usage("selection space overflows 128 bits"))?;
    Ok(if c <= 1 { 0 } else { 128 - (c - 1).leading_zeros() })
}

/// Usable outcomes as triples: `i, j ≠ 0`, `t ≠ 0`, first occurrence per cell.
pub fn usable_triples(alice: &PartyMessage, bob: &PartyMessage) -> Vec<Triple> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for ((i, k), (j, l)) in alice.entries.iter().zip(&bob.entries) {
        let t = k.index() ^ l.index();
        if *i != 0 && *j != 0 && t != 0 && seen.insert((*i, *j)) {
            out.push(Triple { i: *i, j: *j, c: t });
        }
    }
    out
}

/// The `rank`-th `size`-subset of `0..pool` in lexicographic order.
pub fn unrank_combination(pool: u64, size: u64, mut rank: u128) -> Vec<u64> {
    let mut out = Vec::with_capacity(size as usize);
    let mut next = 0u64;
    for remaining in (1..=size).rev() {
        loop {
            // Subsets that start with `next`.
            let with = binomial(pool - next - 1, remaining - 1).expect("bounded by the full count");
            if rank < with {
                out.push(next);
                next += 1;
                break;
            }
            rank -= with;
            next += 1;
        }
    }
    out
}

/// The referee: deterministic given both messages and the selection value.
pub fn referee_answer(alice: &PartyMessage, bob: &PartyMessage, tn: usize, selection: u128) -> PnnAnswer {
    let usable = usable_triples(alice, bob);
    let count = binomial(usable.len() as u64, tn as u64).unwrap_or(u128::MAX);
    if usable.len() < tn || count == 0 {
        return PnnAnswer::Abstain;
    }
    let picks = unrank_combination(usable.len() as u64, tn as u64, selection % count);
    PnnAnswer::Triples(picks.into_iter().map(|p| usable[p as usize]).collect())
}

/// Everything a protocol run produced besides the answer.
#[derive(Clone, Debug)]
pub struct Trace {
    pub outcomes: Vec<Outcome>,
    pub usable: usize,
    pub selection: u128,
    pub selection_width: u32,
    /// Serialized message lengths in bits: Alice, Bob.
    pub message_bits: (u64, u64),
}

/// Produce `reps` repetitions on the chosen backend. Repetition `r` draws
/// from its own stream `(seed, PROTOCOL, r)`.
pub fn run_repetitions(inst: &Instance, idx: &CellIndex, reps: u64, backend: Backend, seed: u64) -> Result<Vec<Outcome>> {
    match backend {
        Backend::Analytic => {
            let mut sampler = AnalyticSampler::with_index(inst, idx.clone());
            (0..reps)
                .map(|r| sampler.run_once(&mut stream(seed, &[role::PROTOCOL, r])))
                .collect()
        }
        Backend::Exact => {
            if inst.n() > qsim::MAX_EXACT_N {
                return Err(Error::usage(format!(
                    "exact backend supports n <= {}, got n={}",
                    qsim::MAX_EXACT_N,
                    inst.n()
                )));
            }
            let povms = qsim::build_povms(inst);
            (0..reps)
                .map(|r| {
                    let o = qsim::run_once(inst, &povms, &mut stream(seed, &[role::PROTOCOL, r]))?;
                    Ok(Outcome { i: o.i as u32, j: o.j as u32, k: o.k, l: o.l })
                })
                .collect()
        }
    }
}

/// Draw the referee's selection value from its own stream.
pub fn draw_selection(seed: u64, width: u32) -> u128 {
    let mut rng = stream(seed, &[role::REFEREE]);
    if width == 0 {
        0
    } else {
        rng.gen::<u128>() >> (128 - width)
    }
}

/// Run the full protocol: `reps` parallel repetitions, then the referee.
pub fn run_pnn_protocol(
    inst: &Instance,
    idx: &CellIndex,
    reps: u64,
    backend: Backend,
    seed: u64,
) -> Result<(PnnAnswer, CostReport, Trace)> {
    let tn = t_n(inst.n())?;
    if reps < tn as u64 {
        return Err(Error::usage(format!("need at least t_n = {tn} repetitions, got {reps}")));
    }
    let outcomes = run_repetitions(inst, idx, reps, backend, seed)?;
    let (alice, bob) = party_messages(&outcomes);
    let (_, a_bits) = alice.to_bytes(inst.n());
    let (_, b_bits) = bob.to_bytes(inst.n());
    let width = selection_bits(reps, tn)?;
    let selection = draw_selection(seed, width);
    let answer = referee_answer(&alice, &bob, tn, selection);
    let cost = CostReport {
        classical_bits: a_bits + b_bits,
        epr_pairs: reps * inst.bits() as u64,
        repetitions: reps,
    };
    let trace = Trace {
        usable: usable_triples(&alice, &bob).len(),
        outcomes,
        selection,
        selection_width: width,
        message_bits: (a_bits, b_bits),
    };
    Ok((answer, cost, trace))
}

/// Classical strategies used as empirical foils.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Baseline {
    /// `t_n` distinct uniformly random cells with uniformly random non-zero witnesses.
    RandomGuess,
    /// Alice sends Bob as many `(element, row)` pairs as fit in `k_bits`.
    OnewayPrefix { k_bits: u64 },
}

/// Bits per `(element, row)` pair: `m + ceil(log2 n)`.
pub fn pair_bits(n: usize, m: u32) -> u64 {
    m as u64 + n.trailing_zeros() as u64
}

/// Uniformly random distinct cells with random non-zero witnesses.
pub fn random_guess<R: Rng + ?Sized>(n: usize, tn: usize, rng: &mut R) -> Vec<Triple> {
    let universe = 4 * (n as u64) * (n as u64);
    sample_indices(rng, n * n, tn)
        .into_iter()
        .map(|cell| Triple {
            i: (cell / n) as u32 + 1,
            j: (cell % n) as u32 + 1,
            c: rng.gen_range(1..universe),
        })
        .collect()
}

/// Alice's side of the one-way prefix strategy: her `(element, row)` pairs
/// in row-major order, as many as fit in `k_bits`, serialized.
pub fn oneway_prefix_message(inst: &Instance, k_bits: u64) -> (Vec<u8>, u64) {
    let n = inst.n();
    let m = inst.bits();
    let per = pair_bits(n, m);
    let count = (k_bits / per) as usize;
    let mut w = BitWriter::new();
    let pairs = inst
        .rows()
        .iter()
        .enumerate()
        .flat_map(|(row, set)| set.iter().map(move |&e| (e, row)))
        .take(count);
    for (e, row) in pairs {
        w.push(e as u128, m);
        w.push(row as u128, n.trailing_zeros());
    }
    let len = w.bit_len();
    (w.into_bytes(), len)
}

/// Decode a one-way prefix transcript into `(element, 0-based row)` pairs.
pub fn decode_pairs(bytes: &[u8], bit_len: u64, n: usize, m: u32) -> Result<Vec<(u32, usize)>> {
    let per = pair_bits(n, m);
    if !bit_len.is_multiple_of(per) {
        return Err(Error::parse("transcript", format!("length {bit_len} is not a multiple of {per}")));
    }
    if bit_len.div_ceil(8) != bytes.len() as u64 {
        return Err(Error::parse("transcript", "byte length disagrees with bit length"));
    }
    let universe = 1u128 << m;
    let mut r = BitReader::new(bytes);
    let mut out = Vec::new();
    for _ in 0..bit_len / per {
        let at = r.position();
        let e = r.read(m)?;
        let row = r.read(n.trailing_zeros())? as usize;
        if e >= universe || row >= n {
            return Err(Error::parse(format!("bit {at}"), "pair out of range"));
        }
        out.push((e as u32, row));
    }
    r.finish()?;
    Ok(out)
}

/// Bob's side: answer from rows he knows completely, else abstain.
///
/// A row whose `n` elements all arrived fixes every cell in that row. If any
/// such cell has size 2, Bob answers with it (witness drawn uniformly among
/// valid non-zero ones) and fills the remaining slots with other known cells
/// of size other than 2.
pub fn oneway_prefix_answer<R: Rng + ?Sized>(
    n: usize,
    m: u32,
    cols: &[Vec<u32>],
    pairs: &[(u32, usize)],
    tn: usize,
    rng: &mut R,
) -> PnnAnswer {
    let mut known: Vec<Vec<u32>> = vec![Vec::new(); n];
    for &(e, row) in pairs {
        known[row].push(e);
    }
    let mut twos = Vec::new();
    let mut others = Vec::new();
    for (row, elems) in known.iter_mut().enumerate() {
        if elems.len() != n {
            continue;
        }
        elems.sort_unstable();
        for (col, set) in cols.iter().enumerate() {
            let cell = crate::instances::intersect_sorted(elems, set);
            let at = (row as u32 + 1, col as u32 + 1);
            if cell.len() == 2 {
                twos.push((at, (cell[0] ^ cell[1]) as u64));
            } else {
                others.push(at);
            }
        }
    }
    let Some(&((i, j), s)) = twos.first() else {
        return PnnAnswer::Abstain;
    };
    if others.len() + 1 < tn {
        return PnnAnswer::Abstain;
    }
    let mut triples = vec![Triple { i, j, c: valid_witness(s, m, rng) }];
    let universe = 1u64 << m;
    for &(i, j) in others.iter().take(tn - 1) {
        triples.push(Triple { i, j, c: rng.gen_range(1..universe) });
    }
    PnnAnswer::Triples(triples)
}

/// Uniform non-zero `c` with `<c, s> = 0`, for `s ≠ 0`.
pub fn valid_witness<R: Rng + ?Sized>(s: u64, m: u32, rng: &mut R) -> u64 {
    let dim = 1u64 << m;
    loop {
        let mut c = rng.gen_range(0..dim);
        if crate::gf2m::inner_raw(c, s) == 1 {
            c ^= 1u64 << s.trailing_zeros();
        }
        if c != 0 {
            return c;
        }
    }
}

/// Result of a classical baseline run, with the bits it communicated.
#[derive(Clone, Debug)]
pub struct BaselineRun {
    pub answer: PnnAnswer,
    pub bits: u64,
}

/// Run a classical baseline on `inst`.
pub fn run_classical_baseline<R: Rng + ?Sized>(inst: &Instance, strategy: Baseline, rng: &mut R) -> Result<BaselineRun> {
    let n = inst.n();
    let tn = t_n(n)?;
    match strategy {
        Baseline::RandomGuess => Ok(BaselineRun {
            answer: PnnAnswer::Triples(random_guess(n, tn, rng)),
            bits: 0,
        }),
        Baseline::OnewayPrefix { k_bits } => {
            let (bytes, bits) = oneway_prefix_message(inst, k_bits);
            if bits > k_bits {
                return Err(Error::internal(format!("transcript of {bits} bits exceeds budget {k_bits}")));
            }
            let pairs = decode_pairs(&bytes, bits, n, inst.bits())?;
            let answer = oneway_prefix_answer(n, inst.bits(), inst.cols(), &pairs, tn, rng);
            Ok(BaselineRun { answer, bits })
        }
    }
}

/// One line of the trial log.
#[derive(Clone, Debug, Serialize)]
pub struct TrialRecord {
    pub n: usize,
    pub seed: u64,
    pub backend: Backend,
    #[serde(rename = "R")]
    pub reps: u64,
    pub answer: serde_json::Value,
    pub ok: bool,
    pub bits: u64,
    pub epr: u64,
}

/// Run one seeded trial of the entangled protocol on a fixed instance.
pub fn run_trial(inst: &Instance, idx: &CellIndex, reps: Repetitions, backend: Backend, seed: u64) -> Result<TrialRecord> {
    let r = reps.resolve(inst, idx)?;
    let (answer, cost, _) = run_pnn_protocol(inst, idx, r, backend, seed)?;
    let ok = check_pnn_indexed(inst.n(), idx, &answer)?;
    Ok(TrialRecord {
        n: inst.n(),
        seed,
        backend,
        reps: r,
        answer: answer.to_json_value(),
        ok,
        bits: cost.classical_bits,
        epr: cost.epr_pairs,
    })
}
