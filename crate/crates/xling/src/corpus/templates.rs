//! The five question templates and their surface renderings.

use super::{CorpusError, LanguageSpec, Problem, RenderedText, SpanAlignment};

pub const TEMPLATE_COUNT: usize = 5;

enum Tok {
    /// A pivot-vocabulary word, mapped through the target lexicon.
    W(&'static str),
    /// An entity slot, mapped through the target lexicon.
    E(String),
    /// A shared token (number or punctuation), identical in every language.
    S(String),
}

fn num(n: i64) -> Tok {
    Tok::S(n.to_string())
}

fn question_units(problem: &Problem) -> Result<Vec<Vec<Tok>>, CorpusError> {
    use Tok::*;
    let units = match problem.template_id {
        0 => {
            let name = problem.slot_entity("name").to_string();
            vec![
                vec![E(name), W("plants"), num(problem.slot_num("a")), W("bushes"), S(".".into())],
                vec![W("each"), W("bush"), W("has"), num(problem.slot_num("b")), W("roses"), S(".".into())],
                vec![W("each"), W("rose"), W("has"), num(problem.slot_num("c")), W("thorns"), S(".".into())],
                vec![W("how"), W("many"), W("thorns"), W("in"), W("total"), S("?".into())],
            ]
        }
        1 => {
            let x = problem.slot_entity("x").to_string();
            let y = problem.slot_entity("y").to_string();
            vec![
                vec![
                    E(x.clone()), W("has"), num(problem.slot_num("d")), W("dollars"),
                    W("more"), W("than"), W("twice"), E(y.clone()), S(".".into()),
                ],
                vec![E(y), W("has"), num(problem.slot_num("e")), W("dollars"), S(".".into())],
                vec![W("how"), W("many"), W("dollars"), W("has"), E(x), S("?".into())],
            ]
        }
        2 => {
            let name = problem.slot_entity("name").to_string();
            vec![
                vec![E(name), W("has"), num(problem.slot_num("a")), W("apples"), S(".".into())],
                vec![W("gives"), W("away"), num(problem.slot_num("b")), W("apples"), S(".".into())],
                vec![W("shares"), W("the"), W("rest"), W("among"), num(problem.slot_num("c")), W("friends"), S(".".into())],
                vec![W("how"), W("many"), W("apples"), W("each"), S("?".into())],
            ]
        }
        3 => {
            let p = problem.slot_entity("p").to_string();
            let q = problem.slot_entity("q").to_string();
            vec![
                vec![E(p.clone()), W("has"), num(problem.slot_num("a")), W("coins"), S(".".into())],
                vec![
                    E(q), W("has"), num(problem.slot_num("b")), W("coins"),
                    W("fewer"), W("than"), E(p), S(".".into()),
                ],
                vec![W("how"), W("many"), W("coins"), W("together"), S("?".into())],
            ]
        }
        4 => vec![
            vec![
                W("a"), W("train"), W("goes"), num(problem.slot_num("a")),
                W("miles"), W("each"), W("hour"), S(".".into()),
            ],
            vec![
                W("it"), W("rides"), num(problem.slot_num("b")), W("hours"), W("in"),
                W("morning"), W("and"), num(problem.slot_num("c")), W("hours"), W("in"),
                W("evening"), S(".".into()),
            ],
            vec![W("how"), W("many"), W("miles"), W("in"), W("total"), S("?".into())],
        ],
        other => return Err(CorpusError::UnknownTemplate(other)),
    };
    Ok(units)
}

fn realize(units: Vec<Vec<Tok>>, language: &LanguageSpec) -> Result<RenderedText, CorpusError> {
    let mut tokens = Vec::new();
    let mut spans = Vec::new();
    for (unit_id, unit) in units.into_iter().enumerate() {
        let start = tokens.len();
        for tok in unit {
            let surface = match tok {
                Tok::S(s) => s,
                Tok::W(w) => map_word(w, language)?,
                Tok::E(e) => map_word(&e, language)?,
            };
            tokens.push(surface);
        }
        spans.push(SpanAlignment {
            start,
            end: tokens.len(),
            unit_id: unit_id as u32,
        });
    }
    Ok(RenderedText {
        language_id: language.id,
        tokens,
        spans,
    })
}

fn map_word(word: &str, language: &LanguageSpec) -> Result<String, CorpusError> {
    language
        .lexicon
        .forward(word)
        .map(|s| s.to_string())
        .ok_or_else(|| CorpusError::VocabularyMismatch {
            token: word.to_string(),
            language: language.id.0,
        })
}

/// Renders a problem's question in the given language. Numbers are rendered
/// identically in all languages; every other token goes through the lexicon.
pub fn render(problem: &Problem, language: &LanguageSpec) -> Result<RenderedText, CorpusError> {
    realize(question_units(problem)?, language)
}

/// Renders a problem's gold response in the pivot language: one unit per
/// reasoning step plus the terminal answer sentence.
pub fn render_response(
    problem: &Problem,
    pivot: &LanguageSpec,
) -> Result<RenderedText, CorpusError> {
    use Tok::*;
    let mut units: Vec<Vec<Tok>> = problem
        .gold_cot
        .iter()
        .map(|step| {
            vec![
                num(step.lhs),
                S(step.op.symbol().to_string()),
                num(step.rhs),
                S("=".into()),
                num(step.result),
                S(".".into()),
            ]
        })
        .collect();
    units.push(vec![
        W("The"),
        W("answer"),
        W("is"),
        S(problem.gold_answer.to_string()),
        S(".".into()),
    ]);
    realize(units, pivot)
}

/// Every pivot-vocabulary word used by the templates, the entity name pool
/// and the answer sentence. Sorted and deduplicated; this is the lexicon
/// domain for every pseudo-language.
pub fn pivot_vocabulary() -> Vec<&'static str> {
    let mut words = vec![
        "plants", "bushes", "each", "bush", "has", "roses", "rose", "thorns", "how", "many",
        "in", "total", "dollars", "more", "than", "twice", "apples", "gives", "away", "shares",
        "the", "rest", "among", "friends", "coins", "fewer", "together", "a", "train", "goes",
        "miles", "hour", "it", "rides", "hours", "morning", "and", "evening", "The", "answer",
        "is",
    ];
    words.extend_from_slice(&super::problem::NAME_POOL);
    words.sort_unstable();
    words.dedup();
    words
}
