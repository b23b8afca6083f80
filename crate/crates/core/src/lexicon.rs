//! Smell lexicons: loading, validation, annotator combination and exact
//! token matching.
//!
//! Text is tokenized on Unicode whitespace and punctuation, keeping
//! hyphens that sit inside a word (`car-exhaust` stays one token). Every
//! token is normalized with [`normalize_token`] before comparison, so
//! `#Fumes,` and `fumes` match the same lexicon entry. Multi-word lexicon
//! terms match contiguous runs of tokens.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};
use crate::geo::LatLon;
use crate::ingest::{GeoItem, Source};

/// ISO 639-1 two-letter language codes.
const ISO_639_1: &[&str] = &[
    "aa", "ab", "ae", "af", "ak", "am", "an", "ar", "as", "av", "ay", "az", "ba", "be", "bg", "bh",
    "bi", "bm", "bn", "bo", "br", "bs", "ca", "ce", "ch", "co", "cr", "cs", "cu", "cv", "cy", "da",
    "de", "dv", "dz", "ee", "el", "en", "eo", "es", "et", "eu", "fa", "ff", "fi", "fj", "fo", "fr",
    "fy", "ga", "gd", "gl", "gn", "gu", "gv", "ha", "he", "hi", "ho", "hr", "ht", "hu", "hy", "hz",
    "ia", "id", "ie", "ig", "ii", "ik", "io", "is", "it", "iu", "ja", "jv", "ka", "kg", "ki", "kj",
    "kk", "kl", "km", "kn", "ko", "kr", "ks", "ku", "kv", "kw", "ky", "la", "lb", "lg", "li", "ln",
    "lo", "lt", "lu", "lv", "mg", "mh", "mi", "mk", "ml", "mn", "mr", "ms", "mt", "my", "na", "nb",
    "nd", "ne", "ng", "nl", "nn", "no", "nr", "nv", "ny", "oc", "oj", "om", "or", "os", "pa", "pi",
    "pl", "ps", "pt", "qu", "rm", "rn", "ro", "ru", "rw", "sa", "sc", "sd", "se", "sg", "si", "sk",
    "sl", "sm", "sn", "so", "sq", "sr", "ss", "st", "su", "sv", "sw", "ta", "te", "tg", "th", "ti",
    "tk", "tl", "tn", "to", "tr", "ts", "tt", "tw", "ty", "ug", "uk", "ur", "uz", "ve", "vi", "vo",
    "wa", "wo", "xh", "yi", "yo", "za", "zh", "zu",
];

pub fn is_language_code(code: &str) -> bool {
    ISO_639_1.binary_search(&code).is_ok()
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || is_combining_mark(c)
}

/// Lowercase, NFC-compose and strip leading/trailing punctuation.
///
/// Internal punctuation (including hyphens) is left alone; splitting is the
/// tokenizer's job.
pub fn normalize_token(raw: &str) -> String {
    let composed: String = raw.nfc().collect();
    let lowered: String = composed.to_lowercase().nfc().collect();
    lowered.trim_matches(|c: char| !is_word_char(c)).to_string()
}

/// Split text into normalized tokens.
///
/// Token characters are letters, digits, combining marks and hyphens;
/// everything else separates tokens. Leading `#` (hashtags) and
/// leading/trailing hyphens are dropped by normalization.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !(is_word_char(c) || c == '-'))
        .map(normalize_token)
        .filter(|t| !t.is_empty())
        .collect()
}

/// Canonical form of a lexicon term: its normalized tokens joined by a
/// single space.
pub fn normalize_term(surface: &str) -> String {
    tokenize(surface).join(" ")
}

/// Combine annotator word lists by intersection.
///
/// Needs at least three non-empty lists. The result holds the normalized
/// terms present in every list, sorted.
pub fn intersect_annotations<S: AsRef<str>>(lists: &[Vec<S>]) -> Result<Vec<String>> {
    if lists.len() < 3 {
        return Err(Error::invalid(format!(
            "need at least 3 annotator lists, got {}",
            lists.len()
        )));
    }
    let mut sets = lists.iter().enumerate().map(|(i, list)| {
        if list.is_empty() {
            return Err(Error::invalid(format!("annotator list {i} is empty")));
        }
        Ok(list
            .iter()
            .map(|t| normalize_term(t.as_ref()))
            .filter(|t| !t.is_empty())
            .collect::<BTreeSet<_>>())
    });
    let mut acc = sets.next().expect("checked length")?;
    for set in sets {
        let set = set?;
        acc.retain(|t| set.contains(t));
    }
    Ok(acc.into_iter().collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SmellTerm {
    pub surface: String,
    pub language: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
}

impl SmellTerm {
    pub fn normalized(&self) -> String {
        normalize_term(&self.surface)
    }
}

/// A validated smell vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SmellLexicon {
    terms: Vec<SmellTerm>,
    version: String,
}

/// What happened while loading a lexicon file.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LexiconReport {
    pub rows: usize,
    pub blocklisted: usize,
    pub blocklisted_terms: Vec<String>,
}

impl SmellLexicon {
    /// Build a lexicon from terms, enforcing uniqueness and non-empty
    /// normalized surfaces.
    pub fn new(terms: Vec<SmellTerm>, version: impl Into<String>) -> Result<Self> {
        let mut problems = Vec::new();
        let mut seen: BTreeMap<(String, String), usize> = BTreeMap::new();
        for term in &terms {
            let norm = term.normalized();
            if norm.is_empty() {
                problems.push(format!("empty term {:?}", term.surface));
                continue;
            }
            if !is_language_code(&term.language) {
                problems.push(format!(
                    "unknown language code {:?} for term {:?}",
                    term.language, term.surface
                ));
                continue;
            }
            *seen.entry((norm, term.language.clone())).or_default() += 1;
        }
        let dups: Vec<String> = seen
            .iter()
            .filter(|(_, &n)| n > 1)
            .map(|((t, l), n)| format!("{t},{l} (x{n})"))
            .collect();
        if !dups.is_empty() {
            problems.push(format!("duplicate terms: {}", dups.join("; ")));
        }
        if !problems.is_empty() {
            return Err(Error::Validation(problems.join("; ")));
        }
        let mut terms = terms;
        terms.sort_by(|a, b| {
            (a.language.as_str(), a.normalized()).cmp(&(b.language.as_str(), b.normalized()))
        });
        Ok(Self {
            terms,
            version: version.into(),
        })
    }

    pub fn terms(&self) -> &[SmellTerm] {
        &self.terms
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn languages(&self) -> BTreeSet<&str> {
        self.terms.iter().map(|t| t.language.as_str()).collect()
    }

    /// Normalized terms for one language, sorted.
    pub fn normalized_terms(&self, language: &str) -> Vec<String> {
        self.terms
            .iter()
            .filter(|t| t.language == language)
            .map(SmellTerm::normalized)
            .collect()
    }

    pub fn matcher(&self, language: &str) -> TermMatcher {
        TermMatcher::new(self.normalized_terms(language))
    }

    /// One matcher per language present in the lexicon.
    pub fn matchers(&self) -> LexiconMatcher {
        LexiconMatcher {
            by_language: self
                .languages()
                .into_iter()
                .map(|l| (l.to_string(), self.matcher(l)))
                .collect(),
        }
    }
}

/// Parse a plain-text blocklist: one term per line, blank lines ignored.
pub fn parse_blocklist(text: &str) -> BTreeSet<String> {
    text.lines()
        .map(normalize_term)
        .filter(|t| !t.is_empty())
        .collect()
}

pub fn read_blocklist(path: impl AsRef<Path>) -> Result<BTreeSet<String>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_blocklist(&text))
}

#[derive(Debug, Deserialize)]
struct LexiconRow {
    term: String,
    language: String,
    #[serde(default)]
    notes: Option<String>,
}

/// Parse lexicon CSV (`term,language,notes`) and drop blocklisted terms.
///
/// Every row problem (empty term, unknown language, duplicate
/// `(term, language)`) is collected into a single validation error.
pub fn parse_lexicon<R: Read>(
    reader: R,
    blocklist: &BTreeSet<String>,
    version: impl Into<String>,
) -> Result<(SmellLexicon, LexiconReport)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    for required in ["term", "language"] {
        if !headers.iter().any(|h| h == required) {
            return Err(Error::Parse(format!(
                "lexicon header must contain `{required}` (found {:?})",
                headers.iter().collect::<Vec<_>>()
            )));
        }
    }
    let mut terms = Vec::new();
    for (i, row) in rdr.deserialize::<LexiconRow>().enumerate() {
        let row = row.map_err(|e| Error::Parse(format!("lexicon row {}: {e}", i + 2)))?;
        terms.push(SmellTerm {
            surface: row.term,
            language: row.language.to_ascii_lowercase(),
            notes: row.notes.filter(|n| !n.is_empty()),
        });
    }
    let mut report = LexiconReport {
        rows: terms.len(),
        ..Default::default()
    };
    // Validate first so duplicates are reported even when blocklisted.
    let all = SmellLexicon::new(terms, version)?;
    let declared: BTreeSet<String> = all.languages().into_iter().map(String::from).collect();
    let SmellLexicon { terms, version } = all;
    let (blocked, kept): (Vec<_>, Vec<_>) = terms
        .into_iter()
        .partition(|t| blocklist.contains(&t.normalized()));
    report.blocklisted = blocked.len();
    report.blocklisted_terms = blocked.iter().map(SmellTerm::normalized).collect();
    if report.blocklisted > 0 {
        log::warn!(
            "removed {} blocklisted lexicon terms: {}",
            report.blocklisted,
            report.blocklisted_terms.join(", ")
        );
    }
    let lexicon = SmellLexicon {
        terms: kept,
        version,
    };
    let remaining = lexicon.languages();
    let emptied: Vec<&String> = declared
        .iter()
        .filter(|l| !remaining.contains(l.as_str()))
        .collect();
    if !emptied.is_empty() {
        return Err(Error::Validation(format!(
            "no terms left for language(s) {emptied:?} after blocklisting"
        )));
    }
    Ok((lexicon, report))
}

/// Load a lexicon file. The version string is derived from the file's
/// SHA-256 digest.
pub fn load_lexicon(
    path: impl AsRef<Path>,
    blocklist: &BTreeSet<String>,
) -> Result<(SmellLexicon, LexiconReport)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let digest = Sha256::digest(&bytes);
    let version = format!("sha256:{}", &hex_string(&digest)[..16]);
    parse_lexicon(bytes.as_slice(), blocklist, version)
}

pub fn write_lexicon<W: Write>(writer: W, lexicon: &SmellLexicon) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["term", "language", "notes"])?;
    for t in lexicon.terms() {
        wtr.write_record([
            t.surface.as_str(),
            t.language.as_str(),
            t.notes.as_deref().unwrap_or(""),
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("<lexicon writer>", e))?;
    Ok(())
}

pub(crate) fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Compiled exact matcher over one language's normalized terms.
///
/// Immutable once built; `&TermMatcher` can be shared across threads.
#[derive(Debug, Clone, Default)]
pub struct TermMatcher {
    single: HashSet<String>,
    phrases: HashSet<String>,
    max_phrase_tokens: usize,
}

impl TermMatcher {
    pub fn new<I, S>(terms: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut m = TermMatcher::default();
        for term in terms {
            let tokens = tokenize(term.as_ref());
            match tokens.len() {
                0 => {}
                1 => {
                    m.single.insert(tokens.into_iter().next().unwrap());
                }
                n => {
                    m.max_phrase_tokens = m.max_phrase_tokens.max(n);
                    m.phrases.insert(tokens.join(" "));
                }
            }
        }
        m
    }

    pub fn is_empty(&self) -> bool {
        self.single.is_empty() && self.phrases.is_empty()
    }

    /// Terms occurring in `text`, each reported once.
    pub fn match_text(&self, text: &str) -> BTreeSet<String> {
        self.match_tokens(&tokenize(text))
    }

    pub fn match_tokens(&self, tokens: &[String]) -> BTreeSet<String> {
        let mut found = BTreeSet::new();
        if self.is_empty() {
            return found;
        }
        for (i, tok) in tokens.iter().enumerate() {
            if self.single.contains(tok) {
                found.insert(tok.clone());
            }
            if self.max_phrase_tokens >= 2 {
                let mut phrase = tok.clone();
                for next in tokens.iter().skip(i + 1).take(self.max_phrase_tokens - 1) {
                    phrase.push(' ');
                    phrase.push_str(next);
                    if self.phrases.contains(&phrase) {
                        found.insert(phrase.clone());
                    }
                }
            }
        }
        found
    }
}

/// Per-language matchers for a whole lexicon.
#[derive(Debug, Clone, Default)]
pub struct LexiconMatcher {
    by_language: HashMap<String, TermMatcher>,
}

impl LexiconMatcher {
    pub fn for_language(&self, language: &str) -> Option<&TermMatcher> {
        self.by_language.get(language)
    }

    /// Match `text` with the matcher for `language`; unknown languages
    /// yield no matches.
    pub fn match_text(&self, language: &str, text: &str) -> BTreeSet<String> {
        self.for_language(language)
            .map(|m| m.match_text(text))
            .unwrap_or_default()
    }
}

/// Matched lexicon terms of one item, with what later stages need.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemMatch {
    pub id: String,
    pub source: Source,
    pub lat: f64,
    pub lon: f64,
    /// Sorted, distinct normalized terms.
    pub terms: Vec<String>,
}

impl ItemMatch {
    pub fn location(&self) -> LatLon {
        LatLon::new(self.lat, self.lon)
    }
}

/// Items with at least one match, in input order.
pub fn match_items(items: &[GeoItem], matcher: &LexiconMatcher) -> Vec<ItemMatch> {
    items
        .iter()
        .filter_map(|item| {
            let terms = matcher.match_text(&item.language, &item.text);
            (!terms.is_empty()).then(|| ItemMatch {
                id: item.id.clone(),
                source: item.source,
                lat: item.lat,
                lon: item.lon,
                terms: terms.into_iter().collect(),
            })
        })
        .collect()
}

pub fn write_matches<W: Write>(mut writer: W, matches: &[ItemMatch]) -> Result<()> {
    for m in matches {
        serde_json::to_writer(&mut writer, m)?;
        writer
            .write_all(b"\n")
            .map_err(|e| Error::io("<matches writer>", e))?;
    }
    Ok(())
}

/// Read matches written by [`write_matches`]. Any bad line is an error.
pub fn parse_matches<R: Read>(mut reader: R) -> Result<Vec<ItemMatch>> {
    let mut text = String::new();
    reader
        .read_to_string(&mut text)
        .map_err(|e| Error::Parse(e.to_string()))?;
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let m: ItemMatch = serde_json::from_str(line)
            .map_err(|e| Error::Parse(format!("matches line {}: {e}", i + 1)))?;
        if !LatLon::new(m.lat, m.lon).is_valid() {
            return Err(Error::Parse(format!("matches line {}: invalid coordinates", i + 1)));
        }
        if m.terms.is_empty() || m.terms.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Parse(format!(
                "matches line {}: terms must be non-empty, sorted and distinct",
                i + 1
            )));
        }
        if !ids.insert(m.id.clone()) {
            return Err(Error::Parse(format!("matches line {}: duplicate id {:?}", i + 1, m.id)));
        }
        out.push(m);
    }
    Ok(out)
}
