//! Smell vectors per street segment, city-wide base notes and z-scores.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::community::CategoryHierarchy;
use crate::error::{Error, Result};
use crate::geo::Assignment;
use crate::lexicon::ItemMatch;

pub const DEFAULT_MIN_TAGS: usize = 30;

/// Word to top-level category lookup.
#[derive(Debug, Clone, PartialEq)]
pub struct Taxonomy {
    categories: Vec<String>,
    word_category: BTreeMap<String, usize>,
}

impl Taxonomy {
    pub fn new(word_labels: &BTreeMap<String, String>) -> Self {
        let mut categories: Vec<String> = word_labels.values().cloned().collect();
        categories.sort();
        categories.dedup();
        let word_category = word_labels
            .iter()
            .map(|(w, l)| (w.clone(), categories.binary_search(l).expect("label listed")))
            .collect();
        Self {
            categories,
            word_category,
        }
    }

    /// Unclustered words are left out.
    pub fn from_hierarchy(h: &CategoryHierarchy) -> Self {
        Self::new(&h.word_categories())
    }

    /// Sorted category labels.
    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    pub fn category_of(&self, word: &str) -> Option<usize> {
        self.word_category.get(word).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileOptions {
    pub min_tags: usize,
    /// Count words outside the taxonomy in the denominator.
    pub include_uncategorized: bool,
}

impl Default for ProfileOptions {
    fn default() -> Self {
        Self {
            min_tags: DEFAULT_MIN_TAGS,
            include_uncategorized: false,
        }
    }
}

/// Per-segment tag counts: segment id to word to occurrences. Each item
/// contributes each of its matched terms once.
pub type SegmentTags = BTreeMap<String, BTreeMap<String, u64>>;

pub fn segment_tags(assignment: &Assignment, matches: &[ItemMatch]) -> SegmentTags {
    let by_id: BTreeMap<&str, &ItemMatch> = matches.iter().map(|m| (m.id.as_str(), m)).collect();
    let mut out = SegmentTags::new();
    for (segment, items) in &assignment.by_segment {
        let counts = out.entry(segment.clone()).or_default();
        for id in items {
            if let Some(m) = by_id.get(id.as_str()) {
                for t in &m.terms {
                    *counts.entry(t.clone()).or_insert(0) += 1;
                }
            }
        }
    }
    out.retain(|_, c| !c.is_empty());
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmellVector {
    pub segment_id: String,
    /// Tags in the denominator.
    pub tag_count: u64,
    /// One fraction per taxonomy category, in category order.
    pub fractions: Vec<f64>,
}

/// Category fractions of one segment's tags, or `None` with fewer than
/// `min_tags` counted tags.
pub fn segment_smell_vector(
    segment_id: &str,
    tags: &BTreeMap<String, u64>,
    taxonomy: &Taxonomy,
    opts: &ProfileOptions,
) -> Option<SmellVector> {
    let mut counts = vec![0u64; taxonomy.categories.len()];
    let mut total = 0u64;
    for (word, &n) in tags {
        match taxonomy.category_of(word) {
            Some(c) => {
                counts[c] += n;
                total += n;
            }
            None if opts.include_uncategorized => total += n,
            None => {}
        }
    }
    if total == 0 || total < opts.min_tags as u64 {
        return None;
    }
    Some(SmellVector {
        segment_id: segment_id.to_string(),
        tag_count: total,
        fractions: counts.iter().map(|&c| c as f64 / total as f64).collect(),
    })
}

/// Smell vectors of all segments passing the tag threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct SmellVectors {
    pub categories: Vec<String>,
    /// Sorted by segment id.
    pub vectors: Vec<SmellVector>,
}

impl SmellVectors {
    pub fn category_index(&self, category: &str) -> Option<usize> {
        self.categories.iter().position(|c| c == category)
    }

    /// Segment id to fraction for one category.
    pub fn column(&self, category: usize) -> BTreeMap<String, f64> {
        self.vectors
            .iter()
            .map(|v| (v.segment_id.clone(), v.fractions[category]))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

pub fn smell_vectors(tags: &SegmentTags, taxonomy: &Taxonomy, opts: &ProfileOptions) -> SmellVectors {
    SmellVectors {
        categories: taxonomy.categories.clone(),
        vectors: tags
            .iter()
            .filter_map(|(s, t)| segment_smell_vector(s, t, taxonomy, opts))
            .collect(),
    }
}

pub fn write_smell_vectors<W: Write>(writer: W, sv: &SmellVectors) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["segment_id".to_string(), "tag_count".to_string()];
    header.extend(sv.categories.iter().cloned());
    wtr.write_record(&header)?;
    for v in &sv.vectors {
        let mut row = vec![v.segment_id.clone(), v.tag_count.to_string()];
        row.extend(v.fractions.iter().map(|f| f.to_string()));
        wtr.write_record(&row)?;
    }
    wtr.flush().map_err(|e| Error::io("<smell vector writer>", e))?;
    Ok(())
}

pub fn parse_smell_vectors<R: Read>(reader: R) -> Result<SmellVectors> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.len() < 2 || &header[0] != "segment_id" || &header[1] != "tag_count" {
        return Err(Error::Parse("smell vector header must start with segment_id,tag_count".into()));
    }
    let categories: Vec<String> = header.iter().skip(2).map(str::to_string).collect();
    let mut sorted = categories.clone();
    sorted.sort();
    sorted.dedup();
    if sorted != categories {
        return Err(Error::Parse("category columns must be sorted and distinct".into()));
    }
    let mut vectors: Vec<SmellVector> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| Error::Parse(format!("smell vector row {}: {what}", i + 1));
        if rec.len() != header.len() {
            return Err(bad("wrong column count"));
        }
        let tag_count: u64 = rec[1].parse().map_err(|_| bad("bad tag_count"))?;
        let fractions = rec
            .iter()
            .skip(2)
            .map(|f| match f.parse::<f64>() {
                Ok(x) if (0.0..=1.0).contains(&x) => Ok(x),
                _ => Err(bad("fraction outside [0, 1]")),
            })
            .collect::<Result<Vec<f64>>>()?;
        if fractions.iter().sum::<f64>() > 1.0 + 1e-9 {
            return Err(bad("fractions sum above 1"));
        }
        if rec[0].is_empty() || vectors.last().is_some_and(|v| v.segment_id.as_str() >= &rec[0]) {
            return Err(bad("segment ids must be non-empty, sorted and distinct"));
        }
        vectors.push(SmellVector {
            segment_id: rec[0].to_string(),
            tag_count,
            fractions,
        });
    }
    Ok(SmellVectors {
        categories,
        vectors,
    })
}

/// City-wide share of tags per category.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CityDistribution {
    pub categories: Vec<String>,
    pub counts: Vec<u64>,
    pub fractions: Vec<f64>,
}

/// Fractions over categorized tags. `tags` yields (word, occurrences).
pub fn city_distribution<'a, I>(tags: I, taxonomy: &Taxonomy) -> Result<CityDistribution>
where
    I: IntoIterator<Item = (&'a str, u64)>,
{
    let mut counts = vec![0u64; taxonomy.categories.len()];
    for (word, n) in tags {
        if let Some(c) = taxonomy.category_of(word) {
            counts[c] += n;
        }
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::Validation("no categorized tags in the city".into()));
    }
    Ok(CityDistribution {
        categories: taxonomy.categories.clone(),
        fractions: counts.iter().map(|&c| c as f64 / total as f64).collect(),
        counts,
    })
}

/// Tag occurrences of every matched item, each term once per item.
pub fn match_tag_counts(matches: &[ItemMatch]) -> BTreeMap<String, u64> {
    let mut out = BTreeMap::new();
    for m in matches {
        for t in &m.terms {
            *out.entry(t.clone()).or_insert(0) += 1;
        }
    }
    out
}

/// Categories by descending fraction; equal fractions in label order.
pub fn report_base_notes(dist: &CityDistribution) -> Vec<(String, f64)> {
    let mut rows: Vec<(String, f64)> = dist
        .categories
        .iter()
        .cloned()
        .zip(dist.fractions.iter().copied())
        .collect();
    rows.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    rows
}

pub fn write_base_notes_csv<W: Write>(writer: W, ranked: &[(String, f64)]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["rank", "category", "fraction"])?;
    for (i, (c, f)) in ranked.iter().enumerate() {
        wtr.write_record([(i + 1).to_string(), c.clone(), f.to_string()])?;
    }
    wtr.flush().map_err(|e| Error::io("<base notes writer>", e))?;
    Ok(())
}

/// Parse `rank,category,fraction` rows; ranks must run 1, 2, ... in order.
pub fn parse_base_notes_csv<R: Read>(reader: R) -> Result<Vec<(String, f64)>> {
    let mut rdr = csv::Reader::from_reader(reader);
    if rdr.headers()?.iter().collect::<Vec<_>>() != ["rank", "category", "fraction"] {
        return Err(Error::Parse("base notes header must be rank,category,fraction".into()));
    }
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<(usize, String, f64)>().enumerate() {
        let (rank, category, fraction) = row.map_err(|e| Error::Parse(format!("base notes row {}: {e}", i + 2)))?;
        if rank != i + 1 {
            return Err(Error::Parse(format!("base notes row {}: rank {rank} out of order", i + 2)));
        }
        if !(0.0..=1.0).contains(&fraction) {
            return Err(Error::Parse(format!("base notes row {}: fraction {fraction} outside [0, 1]", i + 2)));
        }
        out.push((category, fraction));
    }
    Ok(out)
}

pub fn base_notes_text(ranked: &[(String, f64)]) -> String {
    let width = ranked.iter().map(|(c, _)| c.chars().count()).max().unwrap_or(0);
    ranked
        .iter()
        .enumerate()
        .map(|(i, (c, f))| format!("{:>2}. {c:<width$}  {:5.1}%\n", i + 1, f * 100.0))
        .collect()
}

/// Standard scores with the population standard deviation.
pub fn zscore(values: &[f64]) -> Result<Vec<f64>> {
    if values.len() < 2 {
        return Err(Error::Numerical("z-score needs at least two values".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("z-score of non-finite values".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    if sd.is_nan() || sd <= 1e-12 * mean.abs().max(1.0) {
        return Err(Error::Numerical("z-score of constant values".into()));
    }
    Ok(values.iter().map(|v| (v - mean) / sd).collect())
}

/// [`zscore`] over the values of a keyed field.
pub fn zscore_field(field: &BTreeMap<String, f64>) -> Result<BTreeMap<String, f64>> {
    let values: Vec<f64> = field.values().copied().collect();
    let z = zscore(&values)?;
    Ok(field.keys().cloned().zip(z).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn taxonomy(pairs: &[(&str, &str)]) -> Taxonomy {
        Taxonomy::new(&pairs.iter().map(|(w, l)| (w.to_string(), l.to_string())).collect())
    }

    fn tags(pairs: &[(&str, u64)]) -> BTreeMap<String, u64> {
        pairs.iter().map(|(w, n)| (w.to_string(), *n)).collect()
    }

    fn tax() -> Taxonomy {
        taxonomy(&[("grass", "nature"), ("tree", "nature"), ("exhaust", "emissions"), ("bread", "food")])
    }

    #[test]
    fn fractions() {
        let t = tax();
        assert_eq!(t.categories(), ["emissions", "food", "nature"]);
        let opts = ProfileOptions::default();
        let v = segment_smell_vector("s", &tags(&[("grass", 10), ("bread", 30)]), &t, &opts).unwrap();
        assert_eq!(v.tag_count, 40);
        assert_eq!(v.fractions, vec![0.0, 0.75, 0.25]);
        assert!(segment_smell_vector("s", &tags(&[("grass", 29)]), &t, &opts).is_none());
        let all = segment_smell_vector("s", &tags(&[("exhaust", 30)]), &t, &opts).unwrap();
        assert_eq!(all.fractions, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn uncategorized_words() {
        let t = tax();
        let raw = tags(&[("grass", 30), ("mystery", 10)]);
        let default = segment_smell_vector("s", &raw, &t, &ProfileOptions::default()).unwrap();
        assert_eq!(default.fractions[2], 1.0);
        let opts = ProfileOptions {
            include_uncategorized: true,
            ..Default::default()
        };
        let with = segment_smell_vector("s", &raw, &t, &opts).unwrap();
        assert_eq!(with.tag_count, 40);
        assert_eq!(with.fractions[2], 0.75);
    }

    #[test]
    fn city_distribution_examples() {
        let t = tax();
        let d = city_distribution([("grass", 2), ("tree", 1), ("bread", 1)], &t).unwrap();
        assert_eq!(d.fractions, vec![0.0, 0.25, 0.75]);
        let one = city_distribution([("exhaust", 5)], &t).unwrap();
        assert_eq!(one.fractions, vec![1.0, 0.0, 0.0]);
        assert!(city_distribution([("mystery", 5)], &t).is_err());
        assert!(city_distribution(std::iter::empty(), &t).is_err());
    }

    #[test]
    fn base_note_ranking() {
        let d = CityDistribution {
            categories: vec!["a".into(), "food".into(), "nature".into()],
            counts: vec![4, 4, 6],
            fractions: vec![0.3, 0.3, 0.4],
        };
        let r = report_base_notes(&d);
        let names: Vec<&str> = r.iter().map(|(c, _)| c.as_str()).collect();
        assert_eq!(names, ["nature", "a", "food"]);
        let text = base_notes_text(&r);
        assert!(text.starts_with(" 1. nature"));
    }

    #[test]
    fn zscore_examples() {
        let z = zscore(&[1.0, 2.0, 3.0]).unwrap();
        let s = 1.5f64.sqrt();
        assert!((z[0] + s).abs() < 1e-12 && z[1].abs() < 1e-12 && (z[2] - s).abs() < 1e-12);
        assert!((z[2] - 1.2247).abs() < 1e-4);
        assert!(zscore(&[5.0, 5.0, 5.0]).is_err());
        assert!(zscore(&[5.0]).is_err());
    }

    #[test]
    fn segment_tags_counts_terms_once_per_item() {
        use crate::ingest::Source;
        let m = |id: &str, terms: &[&str]| ItemMatch {
            id: id.into(),
            source: Source::Flickr,
            lat: 0.0,
            lon: 0.0,
            terms: terms.iter().map(|s| s.to_string()).collect(),
        };
        let matches = vec![m("1", &["grass", "tree"]), m("2", &["grass"])];
        let mut a = Assignment::default();
        a.by_segment.insert("s1".into(), vec!["1".into(), "2".into()]);
        a.by_segment.insert("s2".into(), vec!["9".into()]);
        let t = segment_tags(&a, &matches);
        assert_eq!(t.len(), 1);
        assert_eq!(t["s1"], tags(&[("grass", 2), ("tree", 1)]));
    }

    #[test]
    fn smell_vector_csv_round_trip() {
        let sv = SmellVectors {
            categories: vec!["food".into(), "nature".into()],
            vectors: vec![
                SmellVector {
                    segment_id: "a".into(),
                    tag_count: 30,
                    fractions: vec![0.1, 0.9],
                },
                SmellVector {
                    segment_id: "b".into(),
                    tag_count: 31,
                    fractions: vec![1.0 / 3.0, 0.0],
                },
            ],
        };
        let mut buf = Vec::new();
        write_smell_vectors(&mut buf, &sv).unwrap();
        assert_eq!(parse_smell_vectors(&buf[..]).unwrap(), sv);
        assert!(parse_smell_vectors(&b"segment_id,tag_count,x\na,3,1.5\n"[..]).is_err());
    }

    proptest! {
        #[test]
        fn zscore_is_standard(values in proptest::collection::vec(-1e3f64..1e3, 2..60)) {
            prop_assume!(values.iter().any(|v| (v - values[0]).abs() > 1e-6));
            let z = zscore(&values).unwrap();
            let n = z.len() as f64;
            let mean = z.iter().sum::<f64>() / n;
            let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            prop_assert!(mean.abs() < 1e-12);
            prop_assert!((var - 1.0).abs() < 1e-12);
            for i in 0..values.len() {
                for j in 0..values.len() {
                    if values[i] < values[j] {
                        prop_assert!(z[i] < z[j]);
                    }
                }
            }
        }

        #[test]
        fn fractions_sum_to_one(counts in proptest::collection::vec(0u64..20, 4)) {
            let t = tax();
            let words = ["grass", "tree", "exhaust", "bread"];
            let raw: BTreeMap<String, u64> =
                words.iter().zip(&counts).map(|(w, c)| (w.to_string(), *c)).collect();
            let opts = ProfileOptions { min_tags: 1, include_uncategorized: false };
            match segment_smell_vector("s", &raw, &t, &opts) {
                Some(v) => prop_assert!((v.fractions.iter().sum::<f64>() - 1.0).abs() < 1e-12),
                None => prop_assert_eq!(counts.iter().sum::<u64>(), 0),
            }
        }

        #[test]
        fn city_is_weighted_segment_aggregate(
            segs in proptest::collection::vec(proptest::collection::vec(0u64..10, 4), 1..10)
        ) {
            let t = tax();
            let words = ["grass", "tree", "exhaust", "bread"];
            let mut all: BTreeMap<String, u64> = BTreeMap::new();
            let mut weighted = vec![0.0; 3];
            let opts = ProfileOptions { min_tags: 1, include_uncategorized: false };
            for counts in &segs {
                let raw: BTreeMap<String, u64> =
                    words.iter().zip(counts).map(|(w, c)| (w.to_string(), *c)).collect();
                for (w, c) in &raw {
                    *all.entry(w.clone()).or_insert(0) += c;
                }
                if let Some(v) = segment_smell_vector("s", &raw, &t, &opts) {
                    for (k, f) in v.fractions.iter().enumerate() {
                        weighted[k] += f * v.tag_count as f64;
                    }
                }
            }
            let total: f64 = weighted.iter().sum();
            prop_assume!(total > 0.0);
            let d = city_distribution(all.iter().map(|(w, c)| (w.as_str(), *c)), &t).unwrap();
            for k in 0..3 {
                prop_assert!((d.fractions[k] - weighted[k] / total).abs() < 1e-12);
            }
        }
    }
}
