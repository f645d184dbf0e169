//! Synthetic arithmetic word problems with gold chain-of-thought traces.

use num_rational::Rational64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::templates::TEMPLATE_COUNT;
use super::CorpusError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Op {
    Add,
    Sub,
    Mul,
    Div,
}

impl Op {
    pub fn symbol(self) -> &'static str {
        match self {
            Op::Add => "+",
            Op::Sub => "-",
            Op::Mul => "*",
            Op::Div => "/",
        }
    }

    pub fn apply(self, a: Rational64, b: Rational64) -> Rational64 {
        match self {
            Op::Add => a + b,
            Op::Sub => a - b,
            Op::Mul => a * b,
            Op::Div => a / b,
        }
    }
}

/// One gold reasoning step: `lhs op rhs = result`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CotStep {
    pub lhs: i64,
    pub op: Op,
    pub rhs: i64,
    pub result: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum SlotValue {
    Num(i64),
    Entity(String),
}

impl SlotValue {
    pub fn num(&self) -> Option<i64> {
        match self {
            SlotValue::Num(n) => Some(*n),
            SlotValue::Entity(_) => None,
        }
    }
}

/// A templated word problem: the unit of synthetic data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Problem {
    pub id: u32,
    pub template_id: u8,
    pub slots: Vec<(String, SlotValue)>,
    pub gold_answer: Rational64,
    pub gold_cot: Vec<CotStep>,
}

impl Problem {
    pub fn slot_num(&self, name: &str) -> i64 {
        self.slots
            .iter()
            .find(|(n, _)| n == name)
            .and_then(|(_, v)| v.num())
            .unwrap_or_else(|| panic!("missing numeric slot {name}"))
    }

    pub fn slot_entity(&self, name: &str) -> &str {
        self.slots
            .iter()
            .find(|(n, _)| n == name)
            .and_then(|(_, v)| match v {
                SlotValue::Entity(e) => Some(e.as_str()),
                SlotValue::Num(_) => None,
            })
            .unwrap_or_else(|| panic!("missing entity slot {name}"))
    }
}

pub(super) const NAME_POOL: [&str; 8] = ["dan", "mia", "leo", "zoe", "sam", "ava", "max", "ivy"];

fn range(lo: i64, hi: i64, max_value: i64) -> (i64, i64) {
    let hi = hi.min(max_value);
    (lo.min(hi), hi)
}

fn draw(rng: &mut ChaCha8Rng, lo: i64, hi: i64, max_value: i64) -> i64 {
    let (lo, hi) = range(lo, hi, max_value);
    rng.gen_range(lo..=hi)
}

/// Generates `n` problems over the five arithmetic templates. Generation is a
/// pure function of (seed, config): per-problem randomness comes from a
/// dedicated ChaCha stream, so output is order-independent and byte-identical
/// across runs.
pub fn generate_problems(
    n: usize,
    seed: u64,
    max_value: i64,
) -> Result<Vec<Problem>, CorpusError> {
    if n < 1 {
        return Err(CorpusError::InvalidConfig("need n >= 1 problems".into()));
    }
    if max_value < 10 {
        return Err(CorpusError::InvalidConfig(format!(
            "max_value must be >= 10, got {max_value}"
        )));
    }
    let mut problems = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let template_id = (rng.gen_range(0..TEMPLATE_COUNT as u32)) as u8;
        problems.push(instantiate(i as u32, template_id, &mut rng, max_value));
    }
    Ok(problems)
}

fn instantiate(id: u32, template_id: u8, rng: &mut ChaCha8Rng, max_value: i64) -> Problem {
    let name = NAME_POOL[rng.gen_range(0..NAME_POOL.len())];
    match template_id {
        // Chained multiply: bushes * roses * thorns.
        0 => {
            let a = draw(rng, 2, 6, max_value);
            let b = draw(rng, 10, 15, max_value);
            let c = draw(rng, 2, 6, max_value);
            build_chained_multiply(id, name, a, b, c)
        }
        // D more than twice E.
        1 => {
            let other = loop {
                let cand = NAME_POOL[rng.gen_range(0..NAME_POOL.len())];
                if cand != name {
                    break cand;
                }
            };
            let d = draw(rng, 2, 13, max_value);
            let e = draw(rng, 3, 14, max_value);
            build_more_than_twice(id, name, other, d, e)
        }
        // Subtract then divide: (A - B) / C with exact division. The quotient
        // range is capped so the computed slot A stays within max_value.
        2 => {
            let c = draw(rng, 2, 4, max_value);
            let b = draw(rng, 2, 6, max_value);
            let q_hi = ((max_value - b) / c).clamp(1, 12);
            let q = draw(rng, 3.min(q_hi), q_hi, max_value);
            build_subtract_divide(id, name, b + c * q, b, c)
        }
        // Two-entity comparison: A + (A - B).
        3 => {
            let other = loop {
                let cand = NAME_POOL[rng.gen_range(0..NAME_POOL.len())];
                if cand != name {
                    break cand;
                }
            };
            let a = draw(rng, 20, 31, max_value);
            let b = draw(rng, 3, 14, max_value);
            build_comparison(id, name, other, a, b)
        }
        // Rate x time over two intervals: A*B + A*C.
        4 => {
            let a = draw(rng, 3, 8, max_value);
            let b = draw(rng, 2, 6, max_value);
            let c = draw(rng, 2, 6, max_value);
            build_rate_time(id, a, b, c)
        }
        other => panic!("unknown template id {other}"),
    }
}

pub fn build_chained_multiply(id: u32, name: &str, a: i64, b: i64, c: i64) -> Problem {
    let x = a * b;
    let ans = x * c;
    Problem {
        id,
        template_id: 0,
        slots: vec![
            ("name".into(), SlotValue::Entity(name.into())),
            ("a".into(), SlotValue::Num(a)),
            ("b".into(), SlotValue::Num(b)),
            ("c".into(), SlotValue::Num(c)),
        ],
        gold_answer: Rational64::from_integer(ans),
        gold_cot: vec![
            CotStep { lhs: a, op: Op::Mul, rhs: b, result: x },
            CotStep { lhs: x, op: Op::Mul, rhs: c, result: ans },
        ],
    }
}

pub fn build_more_than_twice(id: u32, x: &str, y: &str, d: i64, e: i64) -> Problem {
    let twice = 2 * e;
    let ans = twice + d;
    Problem {
        id,
        template_id: 1,
        slots: vec![
            ("x".into(), SlotValue::Entity(x.into())),
            ("y".into(), SlotValue::Entity(y.into())),
            ("d".into(), SlotValue::Num(d)),
            ("e".into(), SlotValue::Num(e)),
        ],
        gold_answer: Rational64::from_integer(ans),
        gold_cot: vec![
            CotStep { lhs: 2, op: Op::Mul, rhs: e, result: twice },
            CotStep { lhs: twice, op: Op::Add, rhs: d, result: ans },
        ],
    }
}

pub fn build_subtract_divide(id: u32, name: &str, a: i64, b: i64, c: i64) -> Problem {
    let rest = a - b;
    let ans = rest / c;
    debug_assert_eq!(rest % c, 0);
    Problem {
        id,
        template_id: 2,
        slots: vec![
            ("name".into(), SlotValue::Entity(name.into())),
            ("a".into(), SlotValue::Num(a)),
            ("b".into(), SlotValue::Num(b)),
            ("c".into(), SlotValue::Num(c)),
        ],
        gold_answer: Rational64::from_integer(ans),
        gold_cot: vec![
            CotStep { lhs: a, op: Op::Sub, rhs: b, result: rest },
            CotStep { lhs: rest, op: Op::Div, rhs: c, result: ans },
        ],
    }
}

pub fn build_comparison(id: u32, p: &str, q: &str, a: i64, b: i64) -> Problem {
    let fewer = a - b;
    let ans = a + fewer;
    Problem {
        id,
        template_id: 3,
        slots: vec![
            ("p".into(), SlotValue::Entity(p.into())),
            ("q".into(), SlotValue::Entity(q.into())),
            ("a".into(), SlotValue::Num(a)),
            ("b".into(), SlotValue::Num(b)),
        ],
        gold_answer: Rational64::from_integer(ans),
        gold_cot: vec![
            CotStep { lhs: a, op: Op::Sub, rhs: b, result: fewer },
            CotStep { lhs: a, op: Op::Add, rhs: fewer, result: ans },
        ],
    }
}

pub fn build_rate_time(id: u32, a: i64, b: i64, c: i64) -> Problem {
    let x = a * b;
    let y = a * c;
    let ans = x + y;
    Problem {
        id,
        template_id: 4,
        slots: vec![
            ("a".into(), SlotValue::Num(a)),
            ("b".into(), SlotValue::Num(b)),
            ("c".into(), SlotValue::Num(c)),
        ],
        gold_answer: Rational64::from_integer(ans),
        gold_cot: vec![
            CotStep { lhs: a, op: Op::Mul, rhs: b, result: x },
            CotStep { lhs: a, op: Op::Mul, rhs: c, result: y },
            CotStep { lhs: x, op: Op::Add, rhs: y, result: ans },
        ],
    }
}
