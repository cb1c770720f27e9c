#![allow(dead_code)]

pub mod stub;

use std::io::Write;
use std::path::Path;

use pronoun_agents::domain::{PronounFamily, Sample};
use pronoun_agents::eval::PronounTally;

const NAMES: [&str; 8] = [
    "Charlotte",
    "Avery",
    "Marcus",
    "Priya",
    "Jonah",
    "Mei",
    "Tomas",
    "Rowan",
];
const TYPES: [&str; 3] = ["Gendered Female", "Gendered Male", "Non-Binary"];
const OCCUPATIONS: [&str; 5] = ["writer", "nurse", "carpenter", "chemist", "teacher"];

fn pronoun_form(family: PronounFamily) -> &'static str {
    match family {
        PronounFamily::He => "he",
        PronounFamily::She => "she",
        PronounFamily::They => "they",
        PronounFamily::Xe => "xe",
        PronounFamily::Ey => "ey",
        PronounFamily::Fae => "fae",
    }
}

/// `per_family` distinct samples for each of the six families.
pub fn fixture_pool(per_family: usize) -> Vec<Sample> {
    let mut out = Vec::with_capacity(per_family * 6);
    for family in PronounFamily::ALL {
        for i in 0..per_family {
            let name = NAMES[i % NAMES.len()];
            let job = OCCUPATIONS[i % OCCUPATIONS.len()];
            let sentence = format!(
                "{name} is a {job} and {} finished shift number {i} early.",
                pronoun_form(family)
            );
            out.push(Sample::new(name, TYPES[i % TYPES.len()], family, sentence).unwrap());
        }
    }
    out
}

pub fn write_dataset(path: &Path, samples: &[Sample]) {
    let mut file = std::fs::File::create(path).unwrap();
    for s in samples {
        let line = serde_json::json!({
            "antecedent": s.antecedent,
            "antecedent_type": s.antecedent_type,
            "pronoun_family": s.pronoun_family.as_str(),
            "sentence": s.sentence,
        });
        writeln!(file, "{line}").unwrap();
    }
}

pub fn tallies(counts: &[(u32, u32); 6]) -> Vec<PronounTally> {
    PronounFamily::ALL
        .iter()
        .zip(counts)
        .map(|(&f, &(a, d))| PronounTally::from_counts(f, a as u64, d as u64))
        .collect()
}
