#![no_main]

use libfuzzer_sys::fuzz_target;
use rsmp::game::make_game;
use rsmp::protocol::{decode_pairs, BitReader, PartyMessage, Repetitions};

// First byte: log2 n - 2 (mod 5) in the low three bits, repetition count above them.
fuzz_target!(|data: &[u8]| {
    let Some((&head, body)) = data.split_first() else {
        return;
    };
    let log_n = (head & 7) as u32 % 5 + 2;
    let n = 1usize << log_n;
    let m = 2 * log_n + 2;
    let reps = (head >> 3) as u64;

    let mut r = BitReader::new(body);
    if let Ok(msg) = PartyMessage::decode(&mut r, n, m, reps) {
        if r.finish().is_ok() {
            assert_eq!(msg.to_bytes(n).0, body);
        }
    }
    let _ = decode_pairs(body, body.len() as u64 * 8, n, m);
    let game = make_game(n, Repetitions::Count(reps.max(2))).unwrap();
    let _ = game.decode_alice(body, reps.max(2));
});
