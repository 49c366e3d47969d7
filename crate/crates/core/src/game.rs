//! The nonlocality game obtained from the protocol by letting Alice carry
//! the referee's selection randomness in her message.
//!
//! The verifier sees the instance and both messages, rebuilds the referee's
//! answer and accepts iff the answer satisfies the relation. Strategies are
//! the entangled protocol, a local guesser sharing randomness, or a pair of
//! players who may exchange a metered number of classical bits first.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gf2m::Gf2Vec;
use crate::instances::{sample_promised, CellIndex, Instance};
use crate::protocol::{
    decode_pairs, draw_selection, index_bits, oneway_prefix_answer, oneway_prefix_message,
    party_messages, random_guess, referee_answer, run_repetitions, selection_bits, Backend, BitReader,
    BitWriter, PartyMessage, Repetitions,
};
use crate::relations::{check_pnn_indexed, t_n, PnnAnswer, Triple};
use crate::rng::{derive_seed, role, stream};
use crate::stats::wilson_interval;

/// Attempts allowed when drawing a promised instance for one trial.
pub const INSTANCE_TRIES: usize = 10_000;

/// A game on `n × n` instances whose messages carry `R` outcome pairs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Game {
    n: usize,
    reps: Repetitions,
    tn: usize,
    m: u32,
}

/// Alice's message: her outcome per repetition plus the selection field.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AliceMessage {
    pub outcomes: PartyMessage,
    pub selection: u128,
}

pub fn make_game(n: usize, reps: Repetitions) -> Result<Game> {
    let tn = t_n(n)?;
    let m = crate::gf2m::universe_bits(n)?;
    Ok(Game { n, reps, tn, m })
}

impl Game {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn repetitions(&self) -> Repetitions {
        self.reps
    }

    /// Message length `R` on this instance.
    pub fn message_length(&self, inst: &Instance, idx: &CellIndex) -> Result<u64> {
        let r = self.reps.resolve(inst, idx)?;
        if r < self.tn as u64 {
            return Err(Error::usage(format!("need at least t_n = {} repetitions, got {r}", self.tn)));
        }
        Ok(r)
    }

    /// Accept iff the referee's answer rebuilt from the messages satisfies
    /// the relation. Malformed messages are rejected.
    pub fn verify(&self, inst: &Instance, idx: &CellIndex, alice: &AliceMessage, bob: &PartyMessage) -> bool {
        let Ok(r) = self.message_length(inst, idx) else {
            return false;
        };
        let Ok(width) = selection_bits(r, self.tn) else {
            return false;
        };
        let well_formed = |msg: &PartyMessage| {
            msg.entries.len() as u64 == r
                && msg
                    .entries
                    .iter()
                    .all(|(i, v)| *i as usize <= self.n && v.width() == self.m)
        };
        if inst.n() != self.n || !well_formed(&alice.outcomes) || !well_formed(bob) {
            return false;
        }
        if width < 128 && alice.selection >> width != 0 {
            return false;
        }
        let answer = referee_answer(&alice.outcomes, bob, self.tn, alice.selection);
        check_pnn_indexed(self.n, idx, &answer).unwrap_or(false)
    }

    /// Serialize Alice's message: outcome fields, then the selection field.
    pub fn encode_alice(&self, msg: &AliceMessage, reps: u64) -> Result<(Vec<u8>, u64)> {
        let mut w = BitWriter::new();
        msg.outcomes.encode(self.n, &mut w);
        w.push(msg.selection, selection_bits(reps, self.tn)?);
        let len = w.bit_len();
        Ok((w.into_bytes(), len))
    }

    /// Inverse of [`Game::encode_alice`].
    pub fn decode_alice(&self, bytes: &[u8], reps: u64) -> Result<AliceMessage> {
        let mut r = BitReader::new(bytes);
        let outcomes = PartyMessage::decode(&mut r, self.n, self.m, reps)?;
        let selection = r.read(selection_bits(reps, self.tn)?)?;
        r.finish()?;
        Ok(AliceMessage { outcomes, selection })
    }
}

/// Rules for players without entanglement and without communication.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LocalRule {
    /// Shared randomness picks `t_n` cells and witnesses.
    RandomGuess,
}

/// Rules for players who talk before answering.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CommRule {
    /// Alice streams `(element, row)` pairs; Bob answers from fully known
    /// rows and sends back the row of each answer triple.
    OnewayPrefix,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strategy {
    Entangled { backend: Backend },
    Local(LocalRule),
    Communicating { rule: CommRule, budget_bits: u64 },
}

impl Strategy {
    pub fn label(&self) -> &'static str {
        match self {
            Strategy::Entangled { .. } => "entangled",
            Strategy::Local(LocalRule::RandomGuess) => "random_guess",
            Strategy::Communicating { rule: CommRule::OnewayPrefix, .. } => "oneway_prefix",
        }
    }
}

/// Meter for bits exchanged between the players. Sending past the budget
/// is refused and the play is forfeited.
#[derive(Debug)]
pub struct Channel {
    budget: u64,
    used: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BudgetExceeded {
    pub budget: u64,
    pub attempted: u64,
}

impl Channel {
    pub fn new(budget: u64) -> Self {
        Channel { budget, used: 0 }
    }

    pub fn send(&mut self, bits: u64) -> std::result::Result<(), BudgetExceeded> {
        let attempted = self.used + bits;
        if attempted > self.budget {
            return Err(BudgetExceeded { budget: self.budget, attempted });
        }
        self.used = attempted;
        Ok(())
    }

    pub fn used(&self) -> u64 {
        self.used
    }
}

/// Result of one play.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Play {
    pub win: bool,
    /// Bits the players exchanged with each other.
    pub bits: u64,
    pub forfeit: Option<BudgetExceeded>,
}

/// Messages a strategy hands to the verifier.
pub struct Messages {
    pub alice: AliceMessage,
    pub bob: PartyMessage,
    pub bits: u64,
}

/// Messages encoding a fixed list of triples: Alice holds `(i, c)`, Bob `(j, 0)`,
/// remaining repetitions are blank.
fn triple_messages(triples: &[(u32, u32, u64)], reps: u64, m: u32, witness_on_alice: bool) -> (PartyMessage, PartyMessage) {
    let zero = Gf2Vec::from_raw(0, m);
    let mut alice = Vec::with_capacity(reps as usize);
    let mut bob = Vec::with_capacity(reps as usize);
    for &(i, j, c) in triples {
        let c = Gf2Vec::from_raw(c, m);
        if witness_on_alice {
            alice.push((i, c));
            bob.push((j, zero));
        } else {
            alice.push((i, zero));
            bob.push((j, c));
        }
    }
    alice.resize(reps as usize, (0, zero));
    bob.resize(reps as usize, (0, zero));
    (PartyMessage { entries: alice }, PartyMessage { entries: bob })
}

/// Run a strategy on `inst` and produce its messages. All randomness is
/// drawn from streams under `seed`.
pub fn strategy_messages(
    game: &Game,
    strategy: Strategy,
    inst: &Instance,
    idx: &CellIndex,
    seed: u64,
) -> Result<std::result::Result<Messages, BudgetExceeded>> {
    let reps = game.message_length(inst, idx)?;
    let (n, m, tn) = (game.n, game.m, game.tn);
    Ok(Ok(match strategy {
        Strategy::Entangled { backend } => {
            let outcomes = run_repetitions(inst, idx, reps, backend, seed)?;
            let (alice, bob) = party_messages(&outcomes);
            let selection = draw_selection(seed, selection_bits(reps, tn)?);
            Messages { alice: AliceMessage { outcomes: alice, selection }, bob, bits: 0 }
        }
        Strategy::Local(LocalRule::RandomGuess) => {
            let mut shared = stream(seed, &[role::GAME]);
            let triples: Vec<_> = random_guess(n, tn, &mut shared).iter().map(|t| (t.i, t.j, t.c)).collect();
            let (alice, bob) = triple_messages(&triples, reps, m, true);
            Messages { alice: AliceMessage { outcomes: alice, selection: 0 }, bob, bits: 0 }
        }
        Strategy::Communicating { rule: CommRule::OnewayPrefix, budget_bits } => {
            let mut channel = Channel::new(budget_bits);
            let mut bob_rng = stream(seed, &[role::GAME, 1]);
            let reply_bits = tn as u64 * index_bits(n) as u64;
            let forward = budget_bits.saturating_sub(reply_bits);
            let (bytes, sent) = oneway_prefix_message(inst, forward);
            if let Err(e) = channel.send(sent) {
                return Ok(Err(e));
            }
            let pairs = decode_pairs(&bytes, sent, n, m)?;
            let answer = oneway_prefix_answer(n, m, inst.cols(), &pairs, tn, &mut bob_rng);
            // Bob's reply names the row of each answer slot, 0 when abstaining.
            if let Err(e) = channel.send(reply_bits) {
                return Ok(Err(e));
            }
            let triples: Vec<(u32, u32, u64)> = match &answer {
                PnnAnswer::Triples(ts) => ts.iter().map(|t| (t.i, t.j, t.c)).collect(),
                PnnAnswer::Abstain => Vec::new(),
            };
            let (alice, bob) = triple_messages(&triples, reps, m, false);
            if channel.used() > budget_bits {
                return Err(Error::internal("metered transcript exceeds budget"));
            }
            Messages {
                alice: AliceMessage { outcomes: alice, selection: 0 },
                bob,
                bits: channel.used(),
            }
        }
    }))
}

/// Execute `strategy` on `inst` and apply the verifier.
pub fn play(game: &Game, strategy: Strategy, inst: &Instance, idx: &CellIndex, seed: u64) -> Result<Play> {
    match strategy_messages(game, strategy, inst, idx, seed)? {
        Ok(msgs) => {
            if let Strategy::Communicating { budget_bits, .. } = strategy {
                if msgs.bits > budget_bits {
                    return Err(Error::internal(format!("transcript of {} bits exceeds budget {budget_bits}", msgs.bits)));
                }
            }
            Ok(Play {
                win: game.verify(inst, idx, &msgs.alice, &msgs.bob),
                bits: msgs.bits,
                forfeit: None,
            })
        }
        Err(e) => Ok(Play { win: false, bits: 0, forfeit: Some(e) }),
    }
}

/// Win-rate estimate over fresh promised instances.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WinRate {
    pub strategy: String,
    pub n: usize,
    pub trials: u64,
    pub wins: u64,
    pub rate: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub mean_bits: f64,
    pub seed: u64,
    #[serde(skip)]
    pub forfeits: u64,
}

impl WinRate {
    pub const CSV_HEADER: &'static str = "strategy,n,trials,wins,rate,ci_lo,ci_hi,mean_bits,seed";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.strategy, self.n, self.trials, self.wins, self.rate, self.ci_lo, self.ci_hi, self.mean_bits, self.seed
        )
    }
}

/// Play `trials` independent rounds. Trial `k` draws its instance from
/// `(master_seed, INSTANCE, k)` and its play randomness from
/// `(master_seed, GAME, k)`; results do not depend on the thread count.
pub fn estimate_win_rate(game: &Game, strategy: Strategy, trials: u64, master_seed: u64) -> Result<WinRate> {
    if trials == 0 {
        return Err(Error::usage("need at least one trial"));
    }
    let plays: Vec<Play> = (0..trials)
        .into_par_iter()
        .map(|k| {
            let inst = sample_promised(game.n, &mut stream(master_seed, &[role::INSTANCE, k]), INSTANCE_TRIES)?;
            let idx = inst.index();
            play(game, strategy, &inst, &idx, derive_seed(master_seed, &[role::GAME, k]))
        })
        .collect::<Result<_>>()?;
    let wins = plays.iter().filter(|p| p.win).count() as u64;
    let forfeits = plays.iter().filter(|p| p.forfeit.is_some()).count() as u64;
    let bits: u64 = plays.iter().map(|p| p.bits).sum();
    let (ci_lo, ci_hi) = wilson_interval(wins, trials);
    Ok(WinRate {
        strategy: strategy.label().to_string(),
        n: game.n,
        trials,
        wins,
        rate: wins as f64 / trials as f64,
        ci_lo,
        ci_hi,
        mean_bits: bits as f64 / trials as f64,
        seed: master_seed,
        forfeits,
    })
}

/// Triples of an answer, for callers that only need the cells.
pub fn answer_cells(answer: &PnnAnswer) -> Vec<Triple> {
    match answer {
        PnnAnswer::Abstain => Vec::new(),
        PnnAnswer::Triples(ts) => ts.clone(),
    }
}

/// Draw a uniformly random selection value of `width` bits.
pub fn random_selection<R: Rng + ?Sized>(width: u32, rng: &mut R) -> u128 {
    if width == 0 {
        0
    } else {
        rng.gen::<u128>() >> (128 - width)
    }
}
