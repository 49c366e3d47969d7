//! Membership checkers for the two relations and the answer-length schedule.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::gf2m::inner_raw;
use crate::instances::{intersect_sorted, CellIndex, Instance};

/// `floor(log2(log2 n))`, the number of triples an answer must carry.
pub fn t_n(n: usize) -> Result<usize> {
    if n < 4 || !n.is_power_of_two() {
        return Err(Error::usage(format!("t_n needs a power of two n >= 4, got {n}")));
    }
    let log_n = n.trailing_zeros();
    Ok((31 - log_n.leading_zeros()) as usize)
}

/// One answer triple: a 1-based cell address and a witness element.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub i: u32,
    pub j: u32,
    pub c: u64,
}

/// An answer to the `n × n` relation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PnnAnswer {
    Abstain,
    Triples(Vec<Triple>),
}

impl PnnAnswer {
    pub fn is_abstain(&self) -> bool {
        matches!(self, PnnAnswer::Abstain)
    }

    pub fn to_json_value(&self) -> Value {
        match self {
            PnnAnswer::Abstain => serde_json::json!({ "abstain": true }),
            PnnAnswer::Triples(ts) => serde_json::json!({
                "triples": ts.iter().map(|t| [t.i as u64, t.j as u64, t.c]).collect::<Vec<_>>()
            }),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = self.to_json_value().to_string();
        s.push('\n');
        s
    }

    pub fn from_json(input: &[u8]) -> Result<Self> {
        let file: AnswerFile = serde_json::from_slice(input).map_err(|e| {
            Error::parse(format!("line {} column {}", e.line(), e.column()), e.to_string())
        })?;
        match (file.abstain, file.triples) {
            (Some(true), None) => Ok(PnnAnswer::Abstain),
            (Some(false), _) => Err(Error::parse("abstain", "must be true when present")),
            (None, Some(ts)) => ts
                .into_iter()
                .enumerate()
                .map(|(k, [i, j, c])| {
                    let i = u32::try_from(i).map_err(|_| Error::parse(format!("triples[{k}][0]"), "index too large"))?;
                    let j = u32::try_from(j).map_err(|_| Error::parse(format!("triples[{k}][1]"), "index too large"))?;
                    Ok(Triple { i, j, c })
                })
                .collect::<Result<Vec<_>>>()
                .map(PnnAnswer::Triples),
            (None, None) => Err(Error::parse("answer", "expected \"triples\" or \"abstain\"")),
            (Some(true), Some(_)) => Err(Error::parse("answer", "both \"triples\" and \"abstain\" given")),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AnswerFile {
    abstain: Option<bool>,
    triples: Option<Vec<[u64; 3]>>,
}

/// Decide membership of `ans` in the `n × n` relation for `inst`.
///
/// Abstention is never a member. Malformed answers (indices outside
/// `1..=n`, witnesses outside the universe, wrong length) are usage errors.
pub fn check_pnn(inst: &Instance, ans: &PnnAnswer) -> Result<bool> {
    check_pnn_indexed(inst.n(), &inst.index(), ans)
}

/// As [`check_pnn`], against a prebuilt cell index.
pub fn check_pnn_indexed(n: usize, idx: &CellIndex, ans: &PnnAnswer) -> Result<bool> {
    let triples = match ans {
        PnnAnswer::Abstain => return Ok(false),
        PnnAnswer::Triples(ts) => ts,
    };
    let tn = t_n(n)?;
    if triples.len() != tn {
        return Err(Error::usage(format!(
            "answer has {} triples, expected t_n = {tn}",
            triples.len()
        )));
    }
    let universe = (4 * n * n) as u64;
    for t in triples {
        if t.i == 0 || t.i as usize > n || t.j == 0 || t.j as usize > n {
            return Err(Error::usage(format!("triple ({}, {}) outside 1..={n}", t.i, t.j)));
        }
        if t.c >= universe {
            return Err(Error::usage(format!("witness {} outside [0, {universe})", t.c)));
        }
    }

    // (a) pairwise distinct cells
    for (k, a) in triples.iter().enumerate() {
        if triples[..k].iter().any(|b| (b.i, b.j) == (a.i, a.j)) {
            return Ok(false);
        }
    }

    // (b) every addressed 2-cell carries a valid non-zero witness
    let mut hits = 0usize;
    for t in triples {
        let cell = idx.cell(t.i, t.j);
        if cell.len() == 2 {
            let s = (cell[0] ^ cell[1]) as u64;
            if t.c == 0 || inner_raw(t.c, s) != 0 {
                return Ok(false);
            }
            hits += 1;
        }
    }

    // (c) enough 2-cells addressed, or the instance has few 2-cells
    let enough_hits = 66 * hits >= tn;
    let few_two_cells = 65 * idx.two_cells() < n * n;
    Ok(enough_hits || few_two_cells)
}

/// An answer to the single-cell relation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum P11Answer {
    Permuted { sigma: Vec<u64>, c: u64 },
    Plain { c: u64 },
}

impl P11Answer {
    pub fn from_json(input: &[u8]) -> Result<Self> {
        let v: Value = serde_json::from_slice(input).map_err(|e| {
            Error::parse(format!("line {} column {}", e.line(), e.column()), e.to_string())
        })?;
        let obj = v.as_object().ok_or_else(|| Error::parse("answer", "expected an object"))?;
        if let Some(k) = obj.keys().find(|k| *k != "c" && *k != "sigma") {
            return Err(Error::parse(k.clone(), "unknown field"));
        }
        serde_json::from_value(v).map_err(|e| Error::parse("answer", e.to_string()))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string(self).expect("plain data serializes");
        s.push('\n');
        s
    }
}

/// Decide membership for the single-cell relation with `|x ∩ y| = 2`.
pub fn check_p11(x: &[u32], y: &[u32], ans: &P11Answer) -> Result<bool> {
    let n = x.len();
    if n == 0 || y.len() != n {
        return Err(Error::usage("x and y must be non-empty sets of equal size"));
    }
    let universe = 4 * (n as u64) * (n as u64);
    let mut xs = x.to_vec();
    let mut ys = y.to_vec();
    xs.sort_unstable();
    ys.sort_unstable();
    let cell = intersect_sorted(&xs, &ys);
    if cell.len() != 2 {
        return Err(Error::usage(format!(
            "|x ∩ y| = {}, outside the promise |x ∩ y| = 2",
            cell.len()
        )));
    }
    let (a, b) = (cell[0] as u64, cell[1] as u64);
    let (c, s) = match ans {
        P11Answer::Plain { c } => (*c, a ^ b),
        P11Answer::Permuted { sigma, c } => {
            check_permutation(sigma, universe)?;
            (*c, sigma[a as usize] ^ sigma[b as usize])
        }
    };
    if c >= universe {
        return Err(Error::usage(format!("witness {c} outside [0, {universe})")));
    }
    Ok(c != 0 && inner_raw(c, s) == 0)
}

fn check_permutation(sigma: &[u64], universe: u64) -> Result<()> {
    if sigma.len() as u64 != universe {
        return Err(Error::usage(format!(
            "permutation has {} entries, expected {universe}",
            sigma.len()
        )));
    }
    let mut seen = vec![false; sigma.len()];
    for &v in sigma {
        if v >= universe || std::mem::replace(&mut seen[v as usize], true) {
            return Err(Error::usage("sigma is not a bijection on the universe"));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::sample_product;
    use crate::rng::stream;

    #[test]
    fn t_n_values() {
        assert_eq!(t_n(4).unwrap(), 1);
        assert_eq!(t_n(8).unwrap(), 1);
        assert_eq!(t_n(16).unwrap(), 2);
        assert_eq!(t_n(64).unwrap(), 2);
        assert_eq!(t_n(256).unwrap(), 3);
        assert_eq!(t_n(65536).unwrap(), 4);
        assert!(t_n(2).is_err());
        assert!(t_n(12).is_err());
    }

    // Brute-force reading of the relation, written straight from the three
    // conditions with no shared helpers.
    fn brute_pnn(inst: &Instance, ans: &[Triple]) -> bool {
        let n = inst.n();
        let tn = t_n(n).unwrap() as f64;
        for a in 0..ans.len() {
            for b in 0..ans.len() {
                if a != b && ans[a].i == ans[b].i && ans[a].j == ans[b].j {
                    return false;
                }
            }
        }
        let mut hits = 0.0;
        for t in ans {
            let cell = inst.cell(t.i as usize, t.j as usize).unwrap();
            if cell.len() == 2 {
                let s = (cell[0] ^ cell[1]) as u64;
                let ip = (t.c & s).count_ones() % 2;
                if t.c == 0 || ip != 0 {
                    return false;
                }
                hits += 1.0;
            }
        }
        let mut two = 0.0;
        for i in 1..=n {
            for j in 1..=n {
                if inst.cell(i, j).unwrap().len() == 2 {
                    two += 1.0;
                }
            }
        }
        hits >= tn / 66.0 || two < (n * n) as f64 / 65.0
    }

    fn hand_instance() -> Instance {
        // n = 4; cell(1,1) = {5, 6} (a+b = 3), cell(2,2) = {16,17,18}.
        let x = vec![
            vec![5, 6, 7, 8],
            vec![16, 17, 18, 19],
            vec![20, 21, 22, 23],
            vec![24, 25, 26, 27],
        ];
        let y = vec![
            vec![5, 6, 40, 41],
            vec![16, 17, 18, 42],
            vec![43, 44, 45, 46],
            vec![47, 48, 49, 50],
        ];
        Instance::new(4, x, y).unwrap()
    }

    #[test]
    fn pnn_examples() {
        let inst = hand_instance();
        // c = 3 has <3, 3> = 0, c != 0.
        let good = PnnAnswer::Triples(vec![Triple { i: 1, j: 1, c: 3 }]);
        assert!(check_pnn(&inst, &good).unwrap());
        assert!(brute_pnn(&inst, &[Triple { i: 1, j: 1, c: 3 }]));

        let zero = PnnAnswer::Triples(vec![Triple { i: 1, j: 1, c: 0 }]);
        assert!(!check_pnn(&inst, &zero).unwrap());

        let odd = PnnAnswer::Triples(vec![Triple { i: 1, j: 1, c: 1 }]);
        assert!(!check_pnn(&inst, &odd).unwrap());

        // Pointing at the size-3 cell: (b) holds, (c) fails since 0 < 1/66.
        let three = PnnAnswer::Triples(vec![Triple { i: 2, j: 2, c: 9 }]);
        assert!(!check_pnn(&inst, &three).unwrap());
        assert!(!brute_pnn(&inst, &[Triple { i: 2, j: 2, c: 9 }]));

        assert!(!check_pnn(&inst, &PnnAnswer::Abstain).unwrap());
    }

    #[test]
    fn pnn_malformed_is_usage_error() {
        let inst = hand_instance();
        for ts in [
            vec![Triple { i: 0, j: 1, c: 3 }],
            vec![Triple { i: 1, j: 5, c: 3 }],
            vec![Triple { i: 1, j: 1, c: 64 }],
            vec![Triple { i: 1, j: 1, c: 3 }, Triple { i: 2, j: 1, c: 3 }],
        ] {
            assert!(matches!(check_pnn(&inst, &PnnAnswer::Triples(ts)), Err(Error::Usage(_))));
        }
    }

    #[test]
    fn pnn_duplicate_cells_rejected() {
        let mut rng = stream(1, &[]);
        let inst = sample_product(16, &mut rng).unwrap();
        let ans = PnnAnswer::Triples(vec![Triple { i: 1, j: 1, c: 3 }, Triple { i: 1, j: 1, c: 5 }]);
        assert!(!check_pnn(&inst, &ans).unwrap());
    }

    #[test]
    fn pnn_matches_brute_force_on_random_answers() {
        use rand::Rng;
        let mut rng = stream(2, &[]);
        for _ in 0..20 {
            let inst = sample_product(16, &mut rng).unwrap();
            let idx = inst.index();
            // Bias answers toward 2-cells so all branches are exercised.
            let twos: Vec<_> = idx.cells.iter().filter(|c| c.elems.len() == 2).collect();
            for _ in 0..50 {
                let ts: Vec<Triple> = (0..2)
                    .map(|_| {
                        if !twos.is_empty() && rng.gen_bool(0.6) {
                            let c = twos[rng.gen_range(0..twos.len())];
                            Triple { i: c.i, j: c.j, c: rng.gen_range(0..1024) }
                        } else {
                            Triple { i: rng.gen_range(1..=16), j: rng.gen_range(1..=16), c: rng.gen_range(0..1024) }
                        }
                    })
                    .collect();
                assert_eq!(
                    check_pnn_indexed(16, &idx, &PnnAnswer::Triples(ts.clone())).unwrap(),
                    brute_pnn(&inst, &ts),
                    "{ts:?}"
                );
            }
        }
    }

    #[test]
    fn escape_clause_fires_without_two_cells() {
        // No 2-cells anywhere: 65·0 < 16, so any distinct-cell answer passes.
        let x: Vec<Vec<u32>> = (0..4).map(|i| (4 * i..4 * i + 4).collect()).collect();
        let y: Vec<Vec<u32>> = (0..4).map(|i| (32 + 4 * i..36 + 4 * i).collect()).collect();
        let inst = Instance::new(4, x, y).unwrap();
        let ans = PnnAnswer::Triples(vec![Triple { i: 3, j: 2, c: 0 }]);
        assert!(check_pnn(&inst, &ans).unwrap());
    }

    #[test]
    fn p11_examples() {
        // n = 2, universe 16, x ∩ y = {1, 2}, a+b = 3.
        let x = [1, 2];
        let y = [2, 1];
        assert!(check_p11(&x, &y, &P11Answer::Plain { c: 3 }).unwrap());
        assert!(!check_p11(&x, &y, &P11Answer::Plain { c: 0 }).unwrap());
        // a = 1, b = 2 → a+b = 3 has <3,3> = 0; need odd-weight sum: x ∩ y = {0, 1}.
        let x = [0, 1];
        let y = [1, 0];
        assert!(!check_p11(&x, &y, &P11Answer::Plain { c: 1 }).unwrap());
        assert!(matches!(check_p11(&[0, 1], &[0, 5], &P11Answer::Plain { c: 3 }), Err(Error::Usage(_))));
    }

    #[test]
    fn p11_identity_permutation_matches_plain() {
        let id: Vec<u64> = (0..16).collect();
        let (x, y) = ([3u32, 9], [9u32, 3]);
        for c in 0..16u64 {
            assert_eq!(
                check_p11(&x, &y, &P11Answer::Plain { c }).unwrap(),
                check_p11(&x, &y, &P11Answer::Permuted { sigma: id.clone(), c }).unwrap()
            );
        }
        let not_bijection = vec![0u64; 16];
        assert!(check_p11(&x, &y, &P11Answer::Permuted { sigma: not_bijection, c: 1 }).is_err());
    }

    #[test]
    fn p11_odd_weight_sum_fails_with_itself() {
        // Brute force over all pairs in [0,16) for a+b with <a+b, a+b> = 1.
        let (a, b) = (0..16u32)
            .flat_map(|a| (a + 1..16).map(move |b| (a, b)))
            .find(|&(a, b)| ((a ^ b).count_ones() & 1) == 1)
            .unwrap();
        let (x, y) = ([a, b], [a, b]);
        assert!(!check_p11(&x, &y, &P11Answer::Plain { c: (a ^ b) as u64 }).unwrap());
    }

    #[test]
    fn valid_witness_count_exhaustive() {
        for m in 2..=10u32 {
            let size = 1u64 << m;
            for s in 1..size {
                let valid = (1..size).filter(|&c| inner_raw(c, s) == 0).count() as u64;
                assert_eq!(valid, size / 2 - 1);
            }
        }
    }

    #[test]
    fn answer_json_formats() {
        let ans = PnnAnswer::Triples(vec![Triple { i: 1, j: 2, c: 7 }]);
        assert_eq!(ans.to_json(), "{\"triples\":[[1,2,7]]}\n");
        assert_eq!(PnnAnswer::from_json(ans.to_json().as_bytes()).unwrap(), ans);
        assert_eq!(PnnAnswer::from_json(b"{\"abstain\": true}").unwrap(), PnnAnswer::Abstain);
        assert!(PnnAnswer::from_json(b"{\"abstain\": false}").is_err());
        assert!(PnnAnswer::from_json(b"{}").is_err());
        assert!(PnnAnswer::from_json(b"{\"triples\":[[1,2]]}").is_err());

        let p = P11Answer::Plain { c: 5 };
        assert_eq!(p.to_json(), "{\"c\":5}\n");
        assert_eq!(P11Answer::from_json(b"{\"c\":5}").unwrap(), p);
        let q = P11Answer::from_json(b"{\"sigma\":[1,0],\"c\":1}").unwrap();
        assert_eq!(q, P11Answer::Permuted { sigma: vec![1, 0], c: 1 });
        assert!(P11Answer::from_json(b"{\"c\":5,\"d\":1}").is_err());
    }
}
