//! Versioned data files shipped inside the crate, verified against a
//! sha256 manifest on load.

use sha2::{Digest, Sha256};

use crate::corpus::{parse_domain, parse_stories, Dialogue, DomainSpec};
use crate::error::{Error, Result};

pub const BUNDLE_VERSION: &str = "v1";

macro_rules! bundled {
    ($($name:literal),* $(,)?) => {
        &[$(($name, include_str!(concat!("../data/v1/", $name)))),*]
    };
}

pub const FILES: &[(&str, &str)] = bundled![
    "domain.json",
    "hotel.domain.json",
    "restaurant.domain.json",
    "slot_values.json",
    "cooperative_hotel.stories",
    "cooperative_restaurant.stories",
    "uncooperative_seed_hotel.stories",
    "uncooperative_restaurant.stories",
    "toy.stories",
    "babi_task5_templates.json",
];

pub const MANIFEST: &str = include_str!("../data/v1/MANIFEST.sha256");

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// `sha256  name` lines for `files`, sorted by name.
pub fn manifest_for(files: &[(&str, &str)]) -> String {
    let mut lines: Vec<String> = files
        .iter()
        .map(|(name, text)| format!("{}  {name}", sha256_hex(text.as_bytes())))
        .collect();
    lines.sort_by(|a, b| a[66..].cmp(&b[66..]));
    lines.join("\n") + "\n"
}

fn expected_digest(name: &str) -> Option<&'static str> {
    MANIFEST.lines().find_map(|l| {
        let (digest, file) = l.split_once("  ")?;
        (file == name).then_some(digest)
    })
}

/// Returns a bundled file after checking it against the manifest.
pub fn file(name: &str) -> Result<&'static str> {
    let (_, text) = FILES
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| Error::CorruptBundle(name.to_string()))?;
    verify(name, text)?;
    Ok(text)
}

fn verify(name: &str, text: &str) -> Result<()> {
    match expected_digest(name) {
        Some(d) if d == sha256_hex(text.as_bytes()) => Ok(()),
        _ => Err(Error::CorruptBundle(name.to_string())),
    }
}

/// Hotel and restaurant tasks in one inventory.
pub fn domain() -> Result<DomainSpec> {
    parse_domain(file("domain.json")?)
}

pub fn hotel_domain() -> Result<DomainSpec> {
    parse_domain(file("hotel.domain.json")?)
}

pub fn restaurant_domain() -> Result<DomainSpec> {
    parse_domain(file("restaurant.domain.json")?)
}

pub fn stories(name: &str) -> Result<Vec<Dialogue>> {
    parse_stories(file(name)?, &domain()?)
}

/// A three-turn hotel dialogue used for gradient checks.
pub fn toy_dialogue() -> Result<Dialogue> {
    Ok(stories("toy.stories")?.remove(0))
}

#[derive(Debug, Clone)]
pub struct HandcraftedCorpora {
    pub cooperative_hotel: Vec<Dialogue>,
    pub cooperative_restaurant: Vec<Dialogue>,
    pub uncooperative_seed_hotel: Vec<Dialogue>,
    pub uncooperative_restaurant: Vec<Dialogue>,
}

pub fn handcrafted_corpora() -> Result<HandcraftedCorpora> {
    Ok(HandcraftedCorpora {
        cooperative_hotel: stories("cooperative_hotel.stories")?,
        cooperative_restaurant: stories("cooperative_restaurant.stories")?,
        uncooperative_seed_hotel: stories("uncooperative_seed_hotel.stories")?,
        uncooperative_restaurant: stories("uncooperative_restaurant.stories")?,
    })
}
