//! Seeded synthetic corpus of contract-like documents with planted answers.
//!
//! Every instance asks for one fact ("the notice period under the agreement
//! with X"). The sentence stating it is planted in exactly one document, and
//! the reference answer is a verbatim substring of that document and of no
//! other document of the instance. Distractor sentences state the same kind
//! of fact for other parties.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dataset::{write_dataset, Document, Instance};
use crate::error::Result;

const PARTIES: &[&str] = &[
    "Supplier",
    "Customer",
    "Licensee",
    "Licensor",
    "Tenant",
    "Landlord",
    "Contractor",
    "Employer",
    "Vendor",
    "Purchaser",
];
const VERBS: &[&str] = &[
    "deliver", "maintain", "inspect", "disclose", "return", "insure", "document", "certify",
];
const OBJECTS: &[&str] = &[
    "records",
    "invoices",
    "premises",
    "deliverables",
    "materials",
    "reports",
    "equipment",
    "confidential information",
];
const DOC_TYPES: &[&str] = &["Agreement", "Lease", "License", "Contract", "Addendum"];
const FREQUENCIES: &[&str] = &["annually", "quarterly", "monthly", "upon request"];
const CHANNELS: &[&str] = &["registered mail", "courier", "electronic mail"];
const RESOLUTIONS: &[&str] = &[
    "negotiate in good faith",
    "seek mediation",
    "consult senior management",
];
const NAME_A: &[&str] = &[
    "Kestrel",
    "Harbor",
    "Granite",
    "Meridian",
    "Juniper",
    "Cobalt",
    "Sterling",
    "Aldous",
    "Briar",
    "Northgate",
    "Lumen",
    "Orchard",
    "Palisade",
    "Quarry",
    "Redwood",
    "Saffron",
];
const NAME_B: &[&str] = &[
    "Marine",
    "Logistics",
    "Textiles",
    "Analytics",
    "Foods",
    "Energy",
    "Capital",
    "Pharma",
    "Robotics",
    "Media",
    "Freight",
    "Minerals",
];
const NAME_C: &[&str] = &[
    "Holdings",
    "Limited",
    "Group",
    "Partners",
    "Corporation",
    "Trust",
];
const NUMBERS: &[&str] = &[
    "two",
    "three",
    "four",
    "five",
    "six",
    "seven",
    "eight",
    "nine",
    "ten",
    "eleven",
    "twelve",
    "fourteen",
    "fifteen",
    "eighteen",
    "twenty",
    "thirty",
    "forty",
    "forty five",
    "sixty",
    "ninety",
];
const PLACES: &[&str] = &[
    "England and Wales",
    "the State of New York",
    "Ontario",
    "Singapore",
    "Delaware",
    "the Republic of Ireland",
    "New South Wales",
    "Scotland",
];
const CITIES: &[&str] = &[
    "Geneva",
    "London",
    "Paris",
    "Stockholm",
    "Vienna",
    "Hong Kong",
];
const RULES: &[&str] = &["ICC", "LCIA", "UNCITRAL", "SCC"];

#[derive(Clone, Copy)]
enum Field {
    NoticePeriod,
    TerminationFee,
    RenewalTerm,
    LiabilityCap,
    GoverningLaw,
    ArbitrationVenue,
}

const FIELDS: [Field; 6] = [
    Field::NoticePeriod,
    Field::TerminationFee,
    Field::RenewalTerm,
    Field::LiabilityCap,
    Field::GoverningLaw,
    Field::ArbitrationVenue,
];

impl Field {
    fn name(self) -> &'static str {
        match self {
            Field::NoticePeriod => "notice period",
            Field::TerminationFee => "termination fee",
            Field::RenewalTerm => "renewal term",
            Field::LiabilityCap => "liability cap",
            Field::GoverningLaw => "governing law",
            Field::ArbitrationVenue => "arbitration venue",
        }
    }

    fn answer(self, rng: &mut ChaCha8Rng) -> String {
        let n = pick(rng, NUMBERS);
        match self {
            Field::NoticePeriod => format!("{n} business days after written notice"),
            Field::TerminationFee => format!("{n} thousand dollars payable on exit"),
            Field::RenewalTerm => format!("{n} months unless either party objects"),
            Field::LiabilityCap => format!("{n} hundred thousand dollars in aggregate"),
            Field::GoverningLaw => format!("the laws of {}", pick(rng, PLACES)),
            Field::ArbitrationVenue => {
                format!("{} under the {} rules", pick(rng, CITIES), pick(rng, RULES))
            }
        }
    }
}

fn pick<'a>(rng: &mut ChaCha8Rng, items: &[&'a str]) -> &'a str {
    items.choose(rng).expect("non-empty word list")
}

fn entity(rng: &mut ChaCha8Rng) -> String {
    format!(
        "{} {} {}",
        pick(rng, NAME_A),
        pick(rng, NAME_B),
        pick(rng, NAME_C)
    )
}

fn filler_sentence(rng: &mut ChaCha8Rng) -> String {
    let party = pick(rng, PARTIES);
    let doc = pick(rng, DOC_TYPES);
    let object = pick(rng, OBJECTS);
    match rng.gen_range(0..8) {
        0 => format!(
            "The {party} shall {} all {object} in accordance with Section {}.",
            pick(rng, VERBS),
            rng.gen_range(2..30)
        ),
        1 => {
            format!("Any {object} delivered under this {doc} remains the property of the {party}.")
        }
        2 => format!(
            "Nothing in this {doc} limits the right of the {party} to {} the {object}.",
            pick(rng, VERBS)
        ),
        3 => format!(
            "The parties agree that {object} will be reviewed {}.",
            pick(rng, FREQUENCIES)
        ),
        4 => format!(
            "Notices to the {party} must be sent by {}.",
            pick(rng, CHANNELS)
        ),
        5 => format!(
            "This {doc} may be amended only by a written instrument signed by both parties."
        ),
        6 => format!(
            "In the event of a dispute concerning the {object}, the parties shall first {}.",
            pick(rng, RESOLUTIONS)
        ),
        _ => format!("The {party} represents that it has full authority to enter into this {doc}."),
    }
}

fn fact_sentence(field: Field, entity: &str, answer: &str) -> String {
    format!(
        "The {} under the agreement with {entity} is {answer}.",
        field.name()
    )
}

/// Paragraphs of filler with `facts` inserted at random places.
fn document(rng: &mut ChaCha8Rng, facts: Vec<String>) -> String {
    let paragraphs = rng.gen_range(4..=6);
    let mut sentences: Vec<Vec<String>> = (0..paragraphs)
        .map(|_| {
            (0..rng.gen_range(3..=5))
                .map(|_| filler_sentence(rng))
                .collect()
        })
        .collect();
    for fact in facts {
        let p = rng.gen_range(0..sentences.len());
        let at = rng.gen_range(0..=sentences[p].len());
        sentences[p].insert(at, fact);
    }
    sentences
        .into_iter()
        .map(|p| p.join(" "))
        .collect::<Vec<_>>()
        .join("\n")
}

fn instance(rng: &mut ChaCha8Rng, id: String) -> Instance {
    loop {
        let field = FIELDS[rng.gen_range(0..FIELDS.len())];
        let target = entity(rng);
        let answer = field.answer(rng);

        let mut distractor = || loop {
            let e = entity(rng);
            let a = field.answer(rng);
            if e != target && !a.contains(&answer) && !answer.contains(&a) {
                break fact_sentence(field, &e, &a);
            }
        };
        let (d1, d2, d3) = (distractor(), distractor(), distractor());

        let mut docs = vec![
            document(rng, vec![fact_sentence(field, &target, &answer), d1]),
            document(rng, vec![d2, d3]),
        ];
        if rng.gen_bool(0.5) {
            docs.swap(0, 1);
        }
        if docs.iter().filter(|d| d.contains(&answer)).count() != 1 {
            continue;
        }
        return Instance {
            query: format!(
                "What is the {} under the agreement with {target}?",
                field.name()
            ),
            documents: docs
                .into_iter()
                .enumerate()
                .map(|(i, text)| Document {
                    doc_id: format!("{id}-doc{i}"),
                    text,
                })
                .collect(),
            reference_answer: answer,
            id,
        };
    }
}

/// Deterministic for a given seed.
pub fn synthetic_instances(seed: u64, n: usize) -> Vec<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| instance(&mut rng, format!("syn-{i:05}")))
        .collect()
}

pub fn generate_synthetic_corpus(seed: u64, n: usize, path: &Path) -> Result<()> {
    write_dataset(
        BufWriter::new(File::create(path)?),
        &synthetic_instances(seed, n),
    )
}
