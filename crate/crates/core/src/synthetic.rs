//! Seeded generator of biography-like corpora.
//!
//! Actual sentences come from a small template grammar over fixed word
//! lists; each hallucinated sentence is a token-level corruption
//! (substitution, insertion, deletion) of the actual sentence at the same
//! index, so hallucinations keep the sentence skeleton but lose facts.

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::WikiBioEntry;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub entries: usize,
    pub seed: u64,
    pub min_sentences: usize,
    pub max_sentences: usize,
    /// Per-token probability of replacing a word by a random vocabulary word.
    pub substitute_rate: f64,
    /// Per-token probability of inserting a random word after it.
    pub insert_rate: f64,
    /// Per-token probability of dropping a word.
    pub delete_rate: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            entries: 238,
            seed: 0,
            min_sentences: 4,
            max_sentences: 9,
            substitute_rate: 0.45,
            insert_rate: 0.1,
            delete_rate: 0.1,
        }
    }
}

const FIRST: &[&str] = &[
    "Anna", "Bruno", "Clara", "Dmitri", "Elena", "Felix", "Greta", "Hugo", "Irene", "Jonas",
    "Katya", "Lorenzo", "Marta", "Nils", "Olga", "Pavel", "Rosa", "Stefan", "Tomas", "Ursula",
    "Viktor", "Wilma", "Yusuf", "Zora",
];
const LAST: &[&str] = &[
    "Keller", "Moreau", "Lindqvist", "Okafor", "Petrov", "Santos", "Nakamura", "Brennan",
    "Haddad", "Novak", "Ferreira", "Kowalski", "Ahlberg", "Dubois", "Rinaldi", "Varga",
    "Whitlock", "Yamada", "Castell", "Ostrowski",
];
const NATIONALITY: &[&str] = &[
    "Swiss", "French", "Swedish", "Nigerian", "Russian", "Brazilian", "Japanese", "Irish",
    "Lebanese", "Czech", "Portuguese", "Polish", "Hungarian", "Italian", "Canadian",
];
const PROFESSION: &[&str] = &[
    "chemist", "painter", "novelist", "architect", "physician", "composer", "historian",
    "engineer", "botanist", "lawyer", "astronomer", "sculptor", "economist", "poet",
    "diplomat", "mathematician",
];
const PLACE: &[&str] = &[
    "Zurich", "Lyon", "Uppsala", "Lagos", "Kazan", "Recife", "Osaka", "Cork", "Beirut", "Brno",
    "Porto", "Krakow", "Szeged", "Turin", "Halifax", "Leeds", "Romsey", "Ghent", "Aarhus",
    "Valencia",
];
const SUBJECT: &[&str] = &[
    "medicine", "chemistry", "law", "music", "history", "botany", "physics", "philosophy",
    "economics", "architecture", "literature", "geology", "astronomy", "theology",
];
const INSTITUTION: &[&str] = &[
    "the University of Vienna", "King's College", "the Sorbonne", "Trinity College",
    "the Polytechnic Institute", "the Royal Academy", "Leiden University",
    "the Conservatory of Milan", "the University of Tokyo", "McGill University",
];
const AWARD: &[&str] = &[
    "Copley Medal", "Gold Medal", "Order of Merit", "Wolf Prize", "Royal Medal",
    "Grand Prix", "Lasker Award", "Rumford Medal",
];
const ORG: &[&str] = &[
    "Royal Society", "Academy of Sciences", "National Assembly", "College of Physicians",
    "Geological Society", "Philharmonic Society", "Bar Council", "Historical Association",
];
const ROLE: &[&str] = &["president", "secretary", "director", "chair", "treasurer", "dean"];
const TITLE: &[&str] = &[
    "The Quiet Harbour", "Notes on Light", "A Theory of Salt", "The Long Winter",
    "Letters from the Coast", "On Bridges", "The Glass Orchard", "Studies in Motion",
];

#[derive(Clone, Copy)]
enum Pronoun {
    He,
    She,
}

impl Pronoun {
    fn subject(self) -> &'static str {
        match self {
            Pronoun::He => "He",
            Pronoun::She => "She",
        }
    }

    fn lower(self) -> &'static str {
        match self {
            Pronoun::He => "he",
            Pronoun::She => "she",
        }
    }

    fn child(self) -> &'static str {
        match self {
            Pronoun::He => "son",
            Pronoun::She => "daughter",
        }
    }

    fn possessive(self) -> &'static str {
        match self {
            Pronoun::He => "his",
            Pronoun::She => "her",
        }
    }
}

struct Person {
    first: &'static str,
    last: &'static str,
    pronoun: Pronoun,
}

fn pick<R: Rng>(rng: &mut R, list: &[&'static str]) -> &'static str {
    list.choose(rng).expect("non-empty word list")
}

fn year<R: Rng>(rng: &mut R) -> String {
    rng.random_range(1790..1990).to_string()
}

fn sentence<R: Rng>(rng: &mut R, p: &Person, idx: usize) -> String {
    let he = p.pronoun.subject();
    let he_l = p.pronoun.lower();
    let his = p.pronoun.possessive();
    if idx == 0 {
        let born = rng.random_range(1790..1930);
        return format!(
            "{} {} ({} – {}) was a {} {} and {}.",
            p.first,
            p.last,
            born,
            born + rng.random_range(35..90),
            pick(rng, NATIONALITY),
            pick(rng, PROFESSION),
            pick(rng, PROFESSION)
        );
    }
    match rng.random_range(0..12) {
        0 => format!(
            "{he} was born in {}, the {} of a {} from {}.",
            pick(rng, PLACE),
            p.pronoun.child(),
            pick(rng, PROFESSION),
            pick(rng, PLACE)
        ),
        1 => format!(
            "{he} studied {} at {} and obtained a degree in {}.",
            pick(rng, SUBJECT),
            pick(rng, INSTITUTION),
            year(rng)
        ),
        2 => format!(
            "In {}, {he_l} moved to {} and began practice as a {}.",
            year(rng),
            pick(rng, PLACE),
            pick(rng, PROFESSION)
        ),
        3 => format!(
            "{he} married {} {} in {}, and they had {} children.",
            pick(rng, FIRST),
            pick(rng, LAST),
            year(rng),
            rng.random_range(1..7)
        ),
        4 => format!(
            "{he} received the {} for {} work on {} in {}.",
            pick(rng, AWARD),
            his,
            pick(rng, SUBJECT),
            year(rng)
        ),
        5 => format!(
            "{he} wrote several books on {}, including {} ({}).",
            pick(rng, SUBJECT),
            pick(rng, TITLE),
            year(rng)
        ),
        6 => format!(
            "{he} served as {} of the {} from {} to {}.",
            pick(rng, ROLE),
            pick(rng, ORG),
            year(rng),
            year(rng)
        ),
        7 => format!(
            "{} was elected a member of the {} in {}.",
            p.last,
            pick(rng, ORG),
            year(rng)
        ),
        8 => format!(
            "{he} taught {} at {} for {} years.",
            pick(rng, SUBJECT),
            pick(rng, INSTITUTION),
            rng.random_range(2..40)
        ),
        9 => format!(
            "{} later returned to {}, where {he_l} founded a school of {}.",
            p.last,
            pick(rng, PLACE),
            pick(rng, SUBJECT)
        ),
        10 => format!(
            "{his_cap} early work on {} was praised by the {}.",
            pick(rng, SUBJECT),
            pick(rng, ORG),
            his_cap = capitalize(his)
        ),
        _ => format!(
            "{he} died in {} in {} at the age of {}.",
            pick(rng, PLACE),
            year(rng),
            rng.random_range(40..96)
        ),
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn vocabulary() -> Vec<&'static str> {
    let mut words: Vec<&'static str> = Vec::new();
    for list in [FIRST, LAST, NATIONALITY, PROFESSION, PLACE, SUBJECT, AWARD, ORG, ROLE, TITLE, INSTITUTION] {
        for item in list {
            words.extend(item.split(' '));
        }
    }
    words.extend([
        "was", "the", "of", "in", "and", "at", "for", "on", "a", "by", "his", "her", "he", "she",
        "later", "work", "member", "years", "born", "school",
    ]);
    words.sort_unstable();
    words.dedup();
    words
}

/// Splits into words and attached punctuation, corrupts words, rejoins.
fn corrupt<R: Rng>(rng: &mut R, text: &str, vocab: &[&'static str], cfg: &SyntheticConfig) -> String {
    let mut out: Vec<String> = Vec::new();
    for raw in text.split_whitespace() {
        let (word, tail) = split_trailing_punct(raw);
        let is_word = word.chars().any(char::is_alphanumeric);
        if is_word && rng.random_bool(cfg.delete_rate) {
            if !tail.is_empty() {
                match out.last_mut() {
                    Some(prev) => prev.push_str(tail),
                    None => out.push(tail.to_string()),
                }
            }
            continue;
        }
        let word = if is_word && rng.random_bool(cfg.substitute_rate) {
            pick(rng, vocab).to_string()
        } else {
            word.to_string()
        };
        // Inserted words go before trailing punctuation so sentences still
        // end on their period.
        if rng.random_bool(cfg.insert_rate) {
            out.push(word);
            out.push(format!("{}{tail}", pick(rng, vocab)));
        } else {
            out.push(format!("{word}{tail}"));
        }
    }
    let mut s = out.join(" ");
    if s.trim().is_empty() {
        s = pick(rng, vocab).to_string();
    }
    if let Some(first) = s.chars().next() {
        if first.is_lowercase() {
            s = capitalize(&s);
        }
    }
    s
}

fn split_trailing_punct(token: &str) -> (&str, &str) {
    let cut = token
        .char_indices()
        .rev()
        .take_while(|(_, c)| matches!(c, '.' | ',' | ')' | ';'))
        .last()
        .map(|(i, _)| i)
        .unwrap_or(token.len());
    token.split_at(cut)
}

pub fn generate(cfg: &SyntheticConfig) -> Result<Vec<WikiBioEntry>> {
    if cfg.min_sentences == 0 || cfg.min_sentences > cfg.max_sentences {
        return Err(Error::InvalidParameter(format!(
            "sentence range must satisfy 1 <= min <= max (got {}..={})",
            cfg.min_sentences, cfg.max_sentences
        )));
    }
    for (name, rate) in [
        ("substitute_rate", cfg.substitute_rate),
        ("insert_rate", cfg.insert_rate),
        ("delete_rate", cfg.delete_rate),
    ] {
        if !(0.0..=1.0).contains(&rate) {
            return Err(Error::InvalidParameter(format!("{name} must lie in [0, 1], got {rate}")));
        }
    }
    let vocab = vocabulary();
    let width = cfg.entries.max(1).to_string().len().max(4);
    (0..cfg.entries)
        .map(|i| {
            let mut rng = seed::rng(cfg.seed, &format!("synthetic/{i}"));
            let person = Person {
                first: pick(&mut rng, FIRST),
                last: pick(&mut rng, LAST),
                pronoun: if rng.random_bool(0.5) { Pronoun::He } else { Pronoun::She },
            };
            let n = rng.random_range(cfg.min_sentences..=cfg.max_sentences);
            let actual: Vec<String> = (0..n).map(|k| sentence(&mut rng, &person, k)).collect();
            let hal = actual
                .iter()
                .map(|s| corrupt(&mut rng, s, &vocab, cfg))
                .collect();
            WikiBioEntry {
                id: format!("syn-{i:0width$}"),
                actual_sentences: actual,
                hal_sentences: hal,
                annotations: None,
            }
            .validated()
        })
        .collect()
}
