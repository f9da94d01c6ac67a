//! Synthetic temporal-QA world: entities with time-varying position facts
//! and time-invariant biography attributes, rendered through fixed English
//! templates into passages and queries.
//!
//! Every entity holds a timeline of mutually disjoint position facts
//! ("X held the position of Y from A to B."), one short document per fact,
//! plus one biography document carrying invariant attributes (birthplace,
//! profession, institution, residence, nationality). Temporal queries are
//! crafted per time specifier against those timelines; gold labels are
//! resolved with [`timeparse::constraint_satisfied`] so they are sound by
//! construction. Non-temporal queries ask for the invariant attributes of
//! the same entities.

use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::timeparse::{constraint_satisfied, render_constraint, Specifier, TimeConstraint, TimePoint};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("year range [{min_year}, {max_year}] too narrow to host {facts} disjoint fact intervals")]
    YearRangeTooNarrow { min_year: i32, max_year: i32, facts: usize },
    #[error("could not craft enough distinct `{specifier}` queries (wanted {wanted}, crafted {crafted})")]
    QueryBudgetExhausted { specifier: Specifier, wanted: usize, crafted: usize },
    #[error("cannot augment specifier `{0}`: entity timelines yield no further valid queries")]
    Augmentation(Specifier),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed record on line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
}

pub type Result<T> = std::result::Result<T, CorpusError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

/// A 100-word-bounded chunk of a synthetic document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub passage_id: String,
    pub doc_id: String,
    pub text: String,
    pub word_count: usize,
}

/// A query with optional time specifier/constraint and gold passage ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query_id: String,
    pub text: String,
    pub specifier: Option<Specifier>,
    pub constraint: Option<TimeConstraint>,
    pub gold_passage_ids: BTreeSet<String>,
    pub split: Split,
}

impl QueryRecord {
    pub fn is_temporal(&self) -> bool {
        self.specifier.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub entity_count: usize,
    pub facts_per_entity: usize,
    pub year_range: (i32, i32),
    pub queries_per_specifier: usize,
    pub nontemporal_query_count: usize,
    pub chunk_size: usize,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            entity_count: 33,
            facts_per_entity: 60,
            year_range: (1550, 2020),
            queries_per_specifier: 300,
            nontemporal_query_count: 600,
            chunk_size: 100,
            seed: 17,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("entity_count", self.entity_count),
            ("facts_per_entity", self.facts_per_entity),
            ("queries_per_specifier", self.queries_per_specifier),
            ("nontemporal_query_count", self.nontemporal_query_count),
            ("chunk_size", self.chunk_size),
        ];
        for (name, v) in counts {
            if v < 1 {
                return Err(CorpusError::InvalidConfig(format!("{name} must be >= 1")));
            }
        }
        let (min_year, max_year) = self.year_range;
        if min_year >= max_year {
            return Err(CorpusError::InvalidConfig(format!(
                "year_range [{min_year}, {max_year}] must satisfy min < max"
            )));
        }
        // Each fact consumes at least a 1-year gap plus a 2-year span.
        let span = (max_year - min_year + 1) as usize;
        if span < self.facts_per_entity * 3 + 2 {
            return Err(CorpusError::YearRangeTooNarrow {
                min_year,
                max_year,
                facts: self.facts_per_entity,
            });
        }
        Ok(())
    }
}

/// All member queries carry the group's specifier.
#[derive(Debug, Clone, PartialEq)]
pub struct SpecifierGroup {
    pub specifier: Specifier,
    pub queries: Vec<QueryRecord>,
}

/// One time-bounded position fact of an entity. Intervals within an entity
/// are disjoint with at least a one-year gap, so gold labels are unambiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct Fact {
    pub position: String,
    pub start: i32,
    pub end: i32,
    /// Passage ids of the chunks rendered from this fact's document.
    pub passage_ids: Vec<String>,
}

impl Fact {
    pub fn interval(&self) -> (TimePoint, TimePoint) {
        (TimePoint::year(self.start), TimePoint::year(self.end))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entity {
    pub id: usize,
    pub name: String,
    pub birth_city: String,
    pub nationality: String,
    pub profession: String,
    pub institution: String,
    pub residence_city: String,
    pub facts: Vec<Fact>,
    pub bio_passage_ids: Vec<String>,
}

/// The generated world: entities, their rendered passages, and all queries.
#[derive(Debug, Clone)]
pub struct World {
    pub config: CorpusConfig,
    pub entities: Vec<Entity>,
    pub passages: Vec<Passage>,
    pub queries: Vec<QueryRecord>,
}

const FIRST_NAMES: &[&str] = &[
    "Alice", "Marcus", "Yuki", "Priya", "Omar", "Helena", "Dmitri", "Carmen", "Tobias", "Ingrid",
    "Rafael", "Mei", "Leon", "Sofia", "Anders", "Fatima", "Viktor", "Naomi", "Pablo", "Greta",
    "Hassan", "Elena", "Jonas", "Amara", "Felix", "Linnea", "Mateo", "Chiara", "Edgar", "Rosa",
    "Nikolai", "Hana", "Oscar", "Leila", "Bruno", "Astrid", "Samuel", "Vera", "Adrian", "Clara",
];
const LAST_NAMES: &[&str] = &[
    "Whitfield", "Okafor", "Lindqvist", "Marchetti", "Donohue", "Castellanos", "Brandt", "Okabe",
    "Fairbanks", "Novak", "Herrera", "Ashworth", "Takahashi", "Morcombe", "Valdez", "Pellegrini",
    "Sorensen", "Abernathy", "Kovacs", "Delacroix", "Huxley", "Moreau", "Winterbourne", "Silva",
    "Thackeray", "Oyelaran", "Mackenzie", "Vasquez", "Holloway", "Bergstrom", "Carmichael",
    "Nakamura", "Pemberton", "Rossi", "Galloway", "Ferreira", "Sinclair", "Alvarez", "Redgrave",
    "Lombardi",
];
const POSITIONS: &[&str] = &[
    "Mayor", "Senator", "Governor", "Ambassador", "Minister", "Chancellor", "Treasurer",
    "Secretary", "Councillor", "Magistrate", "Professor", "Dean", "Director", "Curator", "Editor",
    "Commissioner", "Registrar", "Provost", "Librarian", "Archivist", "Superintendent",
    "Inspector", "Delegate", "Envoy", "Rector", "Bursar", "Warden", "Chairperson", "Auditor",
    "Adjudicator",
];
const CITIES: &[&str] = &[
    "Marlowe", "Eastgate", "Fernhill", "Ravenport", "Solway", "Kestrel", "Northbrook", "Ashmere",
    "Dunmore", "Wexford", "Larkspur", "Coalbridge", "Silverton", "Maplewood", "Oakhurst",
    "Briarcliff", "Stonegate", "Windermere", "Hollyfield", "Thornbury", "Greystone", "Elmsworth",
    "Foxglove", "Harrowgate", "Ivybridge", "Juniper", "Kingsmead", "Lynwood", "Millhaven",
    "Netherfield",
];
const NATIONALITIES: &[&str] = &[
    "Velorian", "Ostravian", "Kantari", "Miralese", "Norvican", "Aldorian", "Serestan", "Quillian",
    "Tarnovan", "Elbrese", "Vashari", "Lumetian",
];
const PROFESSIONS: &[&str] = &[
    "diplomat", "economist", "historian", "jurist", "scientist", "architect", "journalist",
    "physician", "linguist", "engineer", "botanist", "cartographer",
];
const INSTITUTIONS: &[&str] = &[
    "Meridian Institute", "Halcyon Academy", "Veritas Foundation", "Concord Society",
    "Aurora Observatory", "Lyceum Trust", "Beacon College", "Atlas Bureau", "Summit Assembly",
    "Harbor Commission", "Pinnacle Council", "Cobalt Laboratory", "Heritage Archive",
    "Crescent University", "Frontier Guild",
];

const TEMPORAL_TEMPLATES: &[&str] = &[
    "Which position did {name} hold {phrase}?",
    "What position did {name} hold {phrase}?",
    "What role did {name} have {phrase}?",
];

// Every attribute word here is deliberately absent from the rendered
// passages ("birthplace" vs "born", "residence" vs "resides", ...), so
// answering these queries requires a learned token association instead of
// literal token overlap.
const NONTEMPORAL_TEMPLATES: &[&str] = &[
    "What is the birthplace of {name}?",
    "Which city is the birthplace of {name}?",
    "What is the profession of {name}?",
    "What is the occupation of {name}?",
    "What is the nationality of {name}?",
    "What is the citizenship of {name}?",
    "Which institution employs {name}?",
    "What is the affiliation of {name}?",
    "What is the residence of {name}?",
    "Which city is the residence of {name}?",
    "What is the hometown of {name}?",
    "What is the vocation of {name}?",
    "What is the employer of {name}?",
    "What is the domicile of {name}?",
    "What is the specialty of {name}?",
    "What is the workplace of {name}?",
    "What is the background of {name}?",
    "Where is the home of {name}?",
    "Which field is {name} an expert in?",
];

/// Original (pre-augmentation) per-specifier frequency weights used to shape
/// the train split, ordered as [`Specifier::ALL`]. The imbalance makes the
/// later balance/augment step meaningful.
pub const TRAIN_WEIGHTS: [usize; 7] = [11_676, 5_759, 4_888, 2_741, 2_867, 1_885, 2_392];
/// Heavily skewed raw weights before any augmentation.
pub const RAW_TRAIN_WEIGHTS: [usize; 7] = [11_676, 5_759, 4_888, 903, 973, 309, 473];

/// Train-split query count per specifier: raw-frequency proportions scaled so
/// the per-specifier mean is twice `queries_per_specifier`.
pub fn train_counts(config: &CorpusConfig) -> [usize; 7] {
    let total: usize = RAW_TRAIN_WEIGHTS.iter().sum();
    let budget = 14 * config.queries_per_specifier;
    let mut out = [0usize; 7];
    for (i, w) in RAW_TRAIN_WEIGHTS.iter().enumerate() {
        out[i] = ((budget * w) as f64 / total as f64).round().max(4.0) as usize;
    }
    out
}

/// Dev splits are half the test size: top-1 accuracy on a small dev set is
/// too coarse to place best-checkpoint snapshots reliably.
pub fn dev_count(config: &CorpusConfig) -> usize {
    (config.queries_per_specifier / 2).max(5)
}

/// Generates the synthetic world. Deterministic for a fixed config.
pub fn generate_corpus(config: &CorpusConfig) -> Result<(Vec<Passage>, Vec<QueryRecord>)> {
    let world = World::generate(config)?;
    Ok((world.passages, world.queries))
}

impl World {
    pub fn generate(config: &CorpusConfig) -> Result<World> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

        let mut entities = Vec::with_capacity(config.entity_count);
        let mut passages = Vec::new();
        let mut used_names = HashSet::new();
        for id in 0..config.entity_count {
            let name = loop {
                let first = FIRST_NAMES.choose(&mut rng).unwrap();
                let last = LAST_NAMES.choose(&mut rng).unwrap();
                let name = format!("{first} {last}");
                if used_names.insert(name.clone()) {
                    break name;
                }
            };
            let timeline = sample_timeline(&mut rng, config)?;
            let mut facts = Vec::with_capacity(timeline.len());
            for (j, (start, end)) in timeline.iter().enumerate() {
                let position = *POSITIONS.choose(&mut rng).unwrap();
                let doc_id = format!("d_e{id:03}_f{j:02}");
                let text = format!(
                    "{name} held the position of {position} from {start} to {end}. \
                     During that tenure {name} was often mentioned alongside the {inst}.",
                    inst = INSTITUTIONS.choose(&mut rng).unwrap(),
                );
                let chunks = chunk_document(&doc_id, &text, config.chunk_size);
                let passage_ids = chunks.iter().map(|p| p.passage_id.clone()).collect();
                passages.extend(chunks);
                facts.push(Fact { position: position.to_string(), start: *start, end: *end, passage_ids });
            }
            let birth_city = *CITIES.choose(&mut rng).unwrap();
            let nationality = *NATIONALITIES.choose(&mut rng).unwrap();
            let profession = *PROFESSIONS.choose(&mut rng).unwrap();
            let institution = *INSTITUTIONS.choose(&mut rng).unwrap();
            let residence_city = *CITIES.choose(&mut rng).unwrap();
            let bio_doc_id = format!("d_e{id:03}_bio");
            let bio_text = format!(
                "{name} was born at {birth_city}. {name} is a {nationality} {profession} \
                 affiliated with the {institution} and currently resides at {residence_city}.",
            );
            let chunks = chunk_document(&bio_doc_id, &bio_text, config.chunk_size);
            let bio_passage_ids = chunks.iter().map(|p| p.passage_id.clone()).collect();
            passages.extend(chunks);
            entities.push(Entity {
                id,
                name,
                birth_city: birth_city.to_string(),
                nationality: nationality.to_string(),
                profession: profession.to_string(),
                institution: institution.to_string(),
                residence_city: residence_city.to_string(),
                facts,
                bio_passage_ids,
            });
        }

        let mut world = World { config: config.clone(), entities, passages, queries: Vec::new() };
        let mut queries = Vec::new();
        let mut seen = HashSet::new();

        let trains = train_counts(config);
        let dev = dev_count(config);
        for (i, &spec) in Specifier::ALL.iter().enumerate() {
            for (split, count) in [
                (Split::Train, trains[i]),
                (Split::Dev, dev),
                (Split::Test, config.queries_per_specifier),
            ] {
                for n in 0..count {
                    let query_id = format!("q_{:?}_{}_{n:05}", split, spec.name()).to_lowercase();
                    let q = world.craft_temporal_query(&mut rng, spec, split, query_id, &mut seen)?;
                    queries.push(q);
                }
            }
        }

        let nt_counts = [
            (Split::Train, config.nontemporal_query_count),
            (Split::Dev, (config.nontemporal_query_count / 2).max(5)),
            (Split::Test, config.nontemporal_query_count),
        ];
        let mut nt_seen = HashSet::new();
        for (split, count) in nt_counts {
            for n in 0..count {
                let query_id = format!("q_{split:?}_none_{n:05}").to_lowercase();
                let q = world.craft_nontemporal_query(&mut rng, split, query_id, &mut nt_seen);
                queries.push(q);
            }
        }

        world.queries = queries;
        Ok(world)
    }

    fn craft_temporal_query(
        &self,
        rng: &mut ChaCha8Rng,
        spec: Specifier,
        split: Split,
        query_id: String,
        seen: &mut HashSet<(usize, TimeConstraint)>,
    ) -> Result<QueryRecord> {
        const ATTEMPTS: usize = 400;
        for _ in 0..ATTEMPTS {
            let entity = &self.entities[rng.gen_range(0..self.entities.len())];
            let Some(constraint) = craft_constraint(rng, entity, spec, self.config.year_range) else {
                continue;
            };
            let gold_facts: Vec<&Fact> = entity
                .facts
                .iter()
                .filter(|f| constraint_satisfied(&constraint, f.interval()))
                .collect();
            if gold_facts.is_empty() || gold_facts.len() > 4 {
                continue;
            }
            if !seen.insert((entity.id, constraint)) {
                continue;
            }
            let template = TEMPORAL_TEMPLATES[rng.gen_range(0..TEMPORAL_TEMPLATES.len())];
            let text = template
                .replace("{name}", &entity.name)
                .replace("{phrase}", &render_constraint(&constraint));
            let gold_passage_ids =
                gold_facts.iter().flat_map(|f| f.passage_ids.iter().cloned()).collect();
            return Ok(QueryRecord {
                query_id,
                text,
                specifier: Some(spec),
                constraint: Some(constraint),
                gold_passage_ids,
                split,
            });
        }
        Err(CorpusError::QueryBudgetExhausted { specifier: spec, wanted: 1, crafted: 0 })
    }

    fn craft_nontemporal_query(
        &self,
        rng: &mut ChaCha8Rng,
        split: Split,
        query_id: String,
        seen: &mut HashSet<(usize, usize, Split)>,
    ) -> QueryRecord {
        // Duplicate (entity, template) pairs are avoided while capacity
        // remains, then allowed so any requested count can be met.
        let mut pick = || {
            let e = rng.gen_range(0..self.entities.len());
            let t = rng.gen_range(0..NONTEMPORAL_TEMPLATES.len());
            (e, t)
        };
        let mut choice = pick();
        for _ in 0..200 {
            if seen.insert((choice.0, choice.1, split)) {
                break;
            }
            choice = pick();
        }
        let entity = &self.entities[choice.0];
        let text = NONTEMPORAL_TEMPLATES[choice.1].replace("{name}", &entity.name);
        QueryRecord {
            query_id,
            text,
            specifier: None,
            constraint: None,
            gold_passage_ids: entity.bio_passage_ids.iter().cloned().collect(),
            split,
        }
    }

    /// The entity a generated passage belongs to, recovered from its id.
    pub fn entity_of_passage(&self, passage_id: &str) -> Option<&Entity> {
        let idx: usize = passage_id.strip_prefix("d_e")?.get(..3)?.parse().ok()?;
        self.entities.get(idx)
    }
}

/// Disjoint fact intervals with >= 1-year gaps, left to right.
fn sample_timeline(rng: &mut ChaCha8Rng, config: &CorpusConfig) -> Result<Vec<(i32, i32)>> {
    let (min_year, max_year) = config.year_range;
    let n = config.facts_per_entity;
    for _ in 0..20 {
        let mut intervals = Vec::with_capacity(n);
        let mut cursor = min_year + rng.gen_range(0..3);
        let mut ok = true;
        for _ in 0..n {
            let len = rng.gen_range(2..=6);
            let start = cursor;
            let end = start + len - 1;
            if end > max_year {
                ok = false;
                break;
            }
            intervals.push((start, end));
            cursor = end + 1 + rng.gen_range(1..=3);
        }
        if ok {
            return Ok(intervals);
        }
    }
    // Minimal layout always fits given the validated range.
    let mut intervals = Vec::with_capacity(n);
    let mut cursor = min_year;
    for _ in 0..n {
        intervals.push((cursor, cursor + 1));
        cursor += 3;
    }
    if intervals.last().map_or(false, |&(_, e)| e > max_year) {
        return Err(CorpusError::YearRangeTooNarrow { min_year, max_year, facts: n });
    }
    Ok(intervals)
}

fn maybe_month(rng: &mut ChaCha8Rng, year: i32) -> TimePoint {
    if rng.gen_bool(0.3) {
        TimePoint::year_month(year, rng.gen_range(1..=12))
    } else {
        TimePoint::year(year)
    }
}

/// Crafts a constraint of the requested specifier against an entity's
/// timeline, keeping the satisfying-fact set small. Returns `None` when the
/// timeline cannot host the specifier (caller retries with another entity).
fn craft_constraint(
    rng: &mut ChaCha8Rng,
    entity: &Entity,
    spec: Specifier,
    year_range: (i32, i32),
) -> Option<TimeConstraint> {
    let facts = &entity.facts;
    let (min_year, max_year) = year_range;
    let fact = &facts[rng.gen_range(0..facts.len())];
    match spec {
        Specifier::In => {
            // Mostly boundary years, so the query usually shares a literal
            // year token with the gold passage; interior years keep a
            // purely semantic remainder.
            let year = if rng.gen_bool(0.3) && fact.end - fact.start >= 2 {
                rng.gen_range(fact.start + 1..fact.end)
            } else if rng.gen_bool(0.5) {
                fact.start
            } else {
                fact.end
            };
            TimeConstraint::new(Specifier::In, maybe_month(rng, year), None)
        }
        Specifier::FromTo | Specifier::Between => {
            // Anchor at the fact's own boundaries so both year tokens
            // appear verbatim in the gold passage.
            let (y1, y2) = if rng.gen_bool(0.7) {
                (fact.start, fact.end)
            } else {
                let y1 = rng.gen_range(fact.start..=fact.end);
                (y1, (y1 + rng.gen_range(1..=5)).min(max_year))
            };
            if y2 <= y1 {
                return None;
            }
            let (t1, t2) = if rng.gen_bool(0.3) {
                let m1 = rng.gen_range(1..=12);
                let m2 = rng.gen_range(1..=12);
                (TimePoint::year_month(y1, m1), TimePoint::year_month(y2, m2))
            } else {
                (TimePoint::year(y1), TimePoint::year(y2))
            };
            TimeConstraint::new(spec, t1, Some(t2))
        }
        Specifier::After => {
            // Anchor inside the gap before a late fact. Gap years appear in
            // no passage, so the anchor never matches gold text literally
            // and the model has to learn a directional year shift.
            if facts.len() < 2 {
                return None;
            }
            let j = facts.len() - rng.gen_range(1..=4.min(facts.len() - 1));
            let gap = facts[j - 1].end + 1..facts[j].start;
            if gap.is_empty() {
                return None;
            }
            let t = rng.gen_range(gap.clone());
            if t <= min_year {
                return None;
            }
            TimeConstraint::new(Specifier::After, maybe_month(rng, t), None)
        }
        Specifier::Before => {
            // Mirror of After: anchor in the gap following an early fact.
            if facts.len() < 2 {
                return None;
            }
            let j = rng.gen_range(1..=4.min(facts.len() - 1));
            let gap = facts[j - 1].end + 1..facts[j].start;
            if gap.is_empty() {
                return None;
            }
            let t = rng.gen_range(gap.clone());
            if t >= max_year {
                return None;
            }
            TimeConstraint::new(Specifier::Before, maybe_month(rng, t), None)
        }
        Specifier::InEarly => {
            let years: Vec<i32> = (fact.start..=fact.end)
                .filter(|y| y.rem_euclid(10) <= 4 && y - y.rem_euclid(10) >= min_year - 9)
                .collect();
            let y = *years.choose(rng)?;
            TimeConstraint::new(Specifier::InEarly, TimePoint::year(y - y.rem_euclid(10)), None)
        }
        Specifier::InLate => {
            let years: Vec<i32> = (fact.start..=fact.end).filter(|y| y.rem_euclid(10) >= 5).collect();
            let y = *years.choose(rng)?;
            TimeConstraint::new(Specifier::InLate, TimePoint::year(y - y.rem_euclid(10)), None)
        }
    }
}

/// Greedy split into chunks of exactly `chunk_size` words (last chunk may be
/// shorter). Words are maximal runs of non-whitespace, so the operation is
/// tokenizer-independent and reassembles exactly up to whitespace.
pub fn chunk_document(doc_id: &str, text: &str, chunk_size: usize) -> Vec<Passage> {
    assert!(chunk_size >= 1, "chunk_size must be >= 1");
    let words: Vec<&str> = text.split_whitespace().collect();
    words
        .chunks(chunk_size)
        .enumerate()
        .map(|(i, chunk)| Passage {
            passage_id: format!("{doc_id}#c{i}"),
            doc_id: doc_id.to_string(),
            text: chunk.join(" "),
            word_count: chunk.len(),
        })
        .collect()
}

/// Exactly the queries whose specifier equals `s`, order preserved.
pub fn sample_by_specifier(queries: &[QueryRecord], s: Specifier) -> SpecifierGroup {
    SpecifierGroup {
        specifier: s,
        queries: queries.iter().filter(|q| q.specifier == Some(s)).cloned().collect(),
    }
}

/// Grows each group to at least `target` queries by re-instantiating the
/// query templates over fresh time values against the existing entity
/// timelines, with gold ids re-resolved. Groups already at or above the
/// target pass through unchanged. Duplicated (entity, constraint) pairs are
/// never produced.
pub fn balance_augment(
    world: &World,
    groups: &[SpecifierGroup],
    target: usize,
    seed: u64,
) -> Result<Vec<SpecifierGroup>> {
    let mut out = Vec::with_capacity(groups.len());
    for group in groups {
        if group.queries.len() >= target {
            out.push(group.clone());
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (group.specifier as u64).wrapping_mul(0x9e37));
        let mut seen: HashSet<(usize, TimeConstraint)> = group
            .queries
            .iter()
            .filter_map(|q| {
                let c = q.constraint?;
                let e = world.entity_of_passage(q.gold_passage_ids.iter().next()?)?;
                Some((e.id, c))
            })
            .collect();
        let split = group.queries.first().map_or(Split::Train, |q| q.split);
        let mut queries = group.queries.clone();
        let mut counter = 0usize;
        while queries.len() < target {
            let query_id = format!("q_aug_{}_{counter:05}", group.specifier.name());
            counter += 1;
            match world.craft_temporal_query(&mut rng, group.specifier, split, query_id, &mut seen) {
                Ok(q) => queries.push(q),
                Err(CorpusError::QueryBudgetExhausted { .. }) => {
                    return Err(CorpusError::Augmentation(group.specifier));
                }
                Err(e) => return Err(e),
            }
        }
        out.push(SpecifierGroup { specifier: group.specifier, queries });
    }
    Ok(out)
}

// ---- JSONL serialization ----

pub fn passages_to_jsonl(passages: &[Passage]) -> String {
    let mut out = String::new();
    for p in passages {
        out.push_str(&serde_json::to_string(p).expect("serialize passage"));
        out.push('\n');
    }
    out
}

pub fn queries_to_jsonl(queries: &[QueryRecord]) -> String {
    let mut out = String::new();
    for q in queries {
        out.push_str(&serde_json::to_string(q).expect("serialize query"));
        out.push('\n');
    }
    out
}

fn parse_jsonl<T: serde::de::DeserializeOwned>(text: &str) -> Result<Vec<T>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|source| CorpusError::Json { line: i + 1, source }))
        .collect()
}

pub fn write_passages(passages: &[Passage], path: &Path) -> Result<()> {
    std::fs::write(path, passages_to_jsonl(passages))?;
    Ok(())
}

pub fn read_passages(path: &Path) -> Result<Vec<Passage>> {
    parse_jsonl(&std::fs::read_to_string(path)?)
}

pub fn write_queries(queries: &[QueryRecord], path: &Path) -> Result<()> {
    std::fs::write(path, queries_to_jsonl(queries))?;
    Ok(())
}

pub fn read_queries(path: &Path) -> Result<Vec<QueryRecord>> {
    parse_jsonl(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small_config() -> CorpusConfig {
        CorpusConfig {
            entity_count: 12,
            facts_per_entity: 10,
            year_range: (1940, 2020),
            queries_per_specifier: 20,
            nontemporal_query_count: 30,
            chunk_size: 100,
            seed: 7,
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let config = small_config();
        let (p1, q1) = generate_corpus(&config).unwrap();
        let (p2, q2) = generate_corpus(&config).unwrap();
        assert_eq!(passages_to_jsonl(&p1), passages_to_jsonl(&p2));
        assert_eq!(queries_to_jsonl(&q1), queries_to_jsonl(&q2));
    }

    #[test]
    fn test_split_has_exact_specifier_counts() {
        let config = small_config();
        let (_, queries) = generate_corpus(&config).unwrap();
        for s in Specifier::ALL {
            let n = queries
                .iter()
                .filter(|q| q.split == Split::Test && q.specifier == Some(s))
                .count();
            assert_eq!(n, config.queries_per_specifier, "specifier {s}");
        }
        let temporal_test = queries
            .iter()
            .filter(|q| q.split == Split::Test && q.is_temporal())
            .count();
        assert_eq!(temporal_test, 7 * config.queries_per_specifier);
    }

    #[test]
    fn gold_labels_are_sound_and_exhaustive() {
        let config = small_config();
        let world = World::generate(&config).unwrap();
        for q in world.queries.iter().filter(|q| q.is_temporal()) {
            let c = q.constraint.unwrap();
            let entity = world
                .entity_of_passage(q.gold_passage_ids.iter().next().unwrap())
                .expect("gold passage belongs to an entity");
            // Brute force over every fact of the entity: satisfied iff gold.
            for fact in &entity.facts {
                let in_gold = fact.passage_ids.iter().any(|p| q.gold_passage_ids.contains(p));
                assert_eq!(
                    constraint_satisfied(&c, fact.interval()),
                    in_gold,
                    "query {} fact [{}, {}]",
                    q.query_id,
                    fact.start,
                    fact.end
                );
            }
        }
    }

    #[test]
    fn every_gold_id_exists_in_corpus() {
        let config = small_config();
        let (passages, queries) = generate_corpus(&config).unwrap();
        let ids: HashSet<&str> = passages.iter().map(|p| p.passage_id.as_str()).collect();
        for q in &queries {
            assert!(!q.gold_passage_ids.is_empty());
            for g in &q.gold_passage_ids {
                assert!(ids.contains(g.as_str()), "missing {g}");
            }
        }
    }

    #[test]
    fn entity_timelines_are_disjoint() {
        let world = World::generate(&small_config()).unwrap();
        for e in &world.entities {
            for pair in e.facts.windows(2) {
                assert!(pair[0].end < pair[1].start);
            }
        }
    }

    #[test]
    fn narrow_year_range_is_rejected() {
        let config = CorpusConfig {
            year_range: (1990, 2000),
            facts_per_entity: 10,
            ..small_config()
        };
        assert!(matches!(
            generate_corpus(&config),
            Err(CorpusError::YearRangeTooNarrow { .. })
        ));
    }

    #[test]
    fn generated_queries_parse_back_to_their_constraint() {
        let world = World::generate(&small_config()).unwrap();
        for q in &world.queries {
            let parsed = crate::timeparse::parse_query(&q.text);
            match q.constraint {
                Some(c) => assert_eq!(parsed, Some((c.specifier, c)), "query: {}", q.text),
                None => assert_eq!(parsed, None, "query: {}", q.text),
            }
        }
    }

    #[test]
    fn chunking_splits_250_words_into_100_100_50() {
        let text = (0..250).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ");
        let chunks = chunk_document("d", &text, 100);
        let sizes: Vec<usize> = chunks.iter().map(|c| c.word_count).collect();
        assert_eq!(sizes, vec![100, 100, 50]);
    }

    #[test]
    fn chunking_identity_and_empty_cases() {
        let text = (0..100).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ");
        let chunks = chunk_document("d", &text, 100);
        assert_eq!(chunks.len(), 1);
        assert_eq!(chunks[0].text, text);
        assert!(chunk_document("d", "", 100).is_empty());
        assert!(chunk_document("d", "  \n\t ", 100).is_empty());
    }

    #[test]
    fn partition_over_specifiers_is_exact() {
        let world = World::generate(&small_config()).unwrap();
        let mut partitioned = 0;
        for s in Specifier::ALL {
            let group = sample_by_specifier(&world.queries, s);
            assert!(group.queries.iter().all(|q| q.specifier == Some(s)));
            partitioned += group.queries.len();
        }
        let nontemporal = world.queries.iter().filter(|q| !q.is_temporal()).count();
        assert_eq!(partitioned + nontemporal, world.queries.len());
    }

    #[test]
    fn sample_by_specifier_filters_and_preserves_order() {
        let world = World::generate(&small_config()).unwrap();
        let group = sample_by_specifier(&world.queries, Specifier::After);
        let expected: Vec<&str> = world
            .queries
            .iter()
            .filter(|q| q.specifier == Some(Specifier::After))
            .map(|q| q.query_id.as_str())
            .collect();
        let got: Vec<&str> = group.queries.iter().map(|q| q.query_id.as_str()).collect();
        assert_eq!(got, expected);
        assert!(sample_by_specifier(&[], Specifier::In).queries.is_empty());
    }

    #[test]
    fn augment_passes_through_groups_at_target() {
        let world = World::generate(&small_config()).unwrap();
        let train: Vec<QueryRecord> =
            world.queries.iter().filter(|q| q.split == Split::Train).cloned().collect();
        let groups: Vec<SpecifierGroup> =
            Specifier::ALL.iter().map(|&s| sample_by_specifier(&train, s)).collect();
        let small = groups.iter().map(|g| g.queries.len()).min().unwrap();
        let augmented = balance_augment(&world, &groups, small, 3).unwrap();
        assert_eq!(augmented, groups);
    }

    #[test]
    fn augment_grows_only_rare_specifiers_under_proportional_counts() {
        let world = World::generate(&small_config()).unwrap();
        let train: Vec<QueryRecord> =
            world.queries.iter().filter(|q| q.split == Split::Train).cloned().collect();
        let groups: Vec<SpecifierGroup> =
            Specifier::ALL.iter().map(|&s| sample_by_specifier(&train, s)).collect();
        // Equal-share target: with raw-frequency proportions only the four
        // rare specifiers (after, before, in early, in late) fall below it.
        let target = groups.iter().map(|g| g.queries.len()).sum::<usize>() / 7;
        let augmented = balance_augment(&world, &groups, target, 3).unwrap();
        let grew: Vec<Specifier> = groups
            .iter()
            .zip(&augmented)
            .filter(|(before, after)| after.queries.len() > before.queries.len())
            .map(|(b, _)| b.specifier)
            .collect();
        assert_eq!(
            grew,
            vec![Specifier::After, Specifier::Before, Specifier::InEarly, Specifier::InLate]
        );
        for g in &augmented {
            assert!(g.queries.len() >= target.min(g.queries.len()));
        }
    }

    #[test]
    fn augmented_queries_have_sound_gold_and_no_duplicates() {
        let world = World::generate(&small_config()).unwrap();
        let train: Vec<QueryRecord> =
            world.queries.iter().filter(|q| q.split == Split::Train).cloned().collect();
        let groups = vec![sample_by_specifier(&train, Specifier::After)];
        let target = groups[0].queries.len() + 25;
        let augmented = balance_augment(&world, &groups, target, 9).unwrap();
        assert_eq!(augmented[0].queries.len(), target);
        let mut keys = HashSet::new();
        for q in &augmented[0].queries {
            let c = q.constraint.unwrap();
            let entity = world
                .entity_of_passage(q.gold_passage_ids.iter().next().unwrap())
                .unwrap();
            assert!(keys.insert((entity.id, c)), "duplicate query for {}", entity.name);
            for fact in &entity.facts {
                let in_gold = fact.passage_ids.iter().any(|p| q.gold_passage_ids.contains(p));
                assert_eq!(constraint_satisfied(&c, fact.interval()), in_gold);
            }
        }
    }

    #[test]
    fn augment_error_names_the_specifier() {
        // One entity whose only fact sits entirely in the late half of a
        // decade: no in-early window can overlap it.
        let config = small_config();
        let mut world = World::generate(&config).unwrap();
        world.entities.truncate(1);
        world.entities[0].facts = vec![Fact {
            position: "Mayor".into(),
            start: 1995,
            end: 1996,
            passage_ids: vec!["d_e000_f00#c0".into()],
        }];
        let groups = vec![SpecifierGroup { specifier: Specifier::InEarly, queries: vec![] }];
        match balance_augment(&world, &groups, 5, 1) {
            Err(CorpusError::Augmentation(Specifier::InEarly)) => {}
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (passages, queries) = generate_corpus(&small_config()).unwrap();
        let ppath = dir.path().join("passages.jsonl");
        let qpath = dir.path().join("queries.jsonl");
        write_passages(&passages, &ppath).unwrap();
        write_queries(&queries, &qpath).unwrap();
        assert_eq!(read_passages(&ppath).unwrap(), passages);
        assert_eq!(read_queries(&qpath).unwrap(), queries);
        let bytes = std::fs::read(&ppath).unwrap();
        assert!(!bytes.windows(2).any(|w| w == b"\r\n"), "LF endings only");
    }

    proptest! {
        // Word-sequence equality between input and concatenated chunks.
        #[test]
        fn chunk_reassembly(words in proptest::collection::vec("[a-z]{1,8}", 0..400), size in 1usize..120) {
            let text = words.join("  ");
            let chunks = chunk_document("d", &text, size);
            let reassembled: Vec<&str> =
                chunks.iter().flat_map(|c| c.text.split_whitespace()).collect();
            prop_assert_eq!(reassembled, words.iter().map(|s| s.as_str()).collect::<Vec<_>>());
            for c in chunks.iter().rev().skip(1) {
                prop_assert_eq!(c.word_count, size);
            }
        }
    }
}
