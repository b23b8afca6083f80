//! Synthetic cities with planted smell and pollution structure.
//!
//! A city is a regular street grid. Every `major_every`-th grid line is a
//! major road with high NO2; a rectangular park has low NO2. Items are
//! scattered along each segment with GPS jitter, and each item mentions
//! two or three words of one category drawn from its zone's category
//! weights, sometimes with a stray word from another category.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{LatLon, LocalProjection, Xy};
use crate::ingest::{
    compute_aqi, write_air_quality, write_segments, BandTable, GeoItem, Pollutant, SegmentPollution,
    Source, StationReading, StreetSegment,
};
use crate::lexicon::{write_lexicon, SmellLexicon, SmellTerm};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Zone {
    Major,
    Park,
    Residential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub seed: u64,
    /// Intersections per row and column.
    pub grid: [usize; 2],
    /// Distance between neighbouring intersections, metres.
    pub block_m: f64,
    pub origin: LatLon,
    /// Every n-th grid line (0 = none) is a major road.
    pub major_every: usize,
    /// Park rectangle in block coordinates `[x0, y0, x1, y1]`.
    pub park: [f64; 4],
    /// Mean items per segment.
    pub items_per_segment: f64,
    /// Standard deviation of GPS error, metres.
    pub gps_jitter_m: f64,
    /// Chance that an item also mentions a word of a random other category.
    pub stray_word_rate: f64,
    /// Share of Twitter items flagged as retweets.
    pub retweet_rate: f64,
    pub categories: BTreeMap<String, Vec<String>>,
    /// Category weights per zone; need not sum to 1.
    pub zone_weights: BTreeMap<Zone, BTreeMap<String, f64>>,
    /// NO2 concentration: base, shift on major roads, shift in the park,
    /// noise standard deviation.
    pub no2: [f64; 4],
    /// Monitoring stations placed on every n-th intersection (0 = none).
    pub station_every: usize,
}

fn words(ws: &[&str]) -> Vec<String> {
    ws.iter().map(|s| s.to_string()).collect()
}

fn weights(ws: &[(&str, f64)]) -> BTreeMap<String, f64> {
    ws.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

impl Default for SynthSpec {
    fn default() -> Self {
        let categories = [
            ("emissions", words(&["exhaust", "diesel", "fumes", "petrol", "smog", "traffic smoke"])),
            ("nature", words(&["grass", "flowers", "pine", "blossom", "wet earth", "leaves"])),
            ("food", words(&["bread", "coffee", "pizza", "curry", "bakery"])),
            ("animals", words(&["horse", "dog", "manure", "stable"])),
            ("waste", words(&["garbage", "rubbish", "sewage", "bins"])),
            ("tobacco", words(&["cigarette", "cigar", "tobacco", "ashtray"])),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        let zone_weights = [
            (
                Zone::Major,
                weights(&[
                    ("emissions", 0.5),
                    ("food", 0.2),
                    ("tobacco", 0.1),
                    ("waste", 0.1),
                    ("nature", 0.05),
                    ("animals", 0.05),
                ]),
            ),
            (
                Zone::Park,
                weights(&[
                    ("nature", 0.6),
                    ("animals", 0.15),
                    ("food", 0.15),
                    ("tobacco", 0.05),
                    ("waste", 0.03),
                    ("emissions", 0.02),
                ]),
            ),
            (
                Zone::Residential,
                weights(&[
                    ("food", 0.35),
                    ("nature", 0.15),
                    ("waste", 0.15),
                    ("tobacco", 0.15),
                    ("emissions", 0.1),
                    ("animals", 0.1),
                ]),
            ),
        ]
        .into_iter()
        .collect();
        Self {
            seed: 1,
            grid: [12, 12],
            block_m: 120.0,
            origin: LatLon::new(51.5, -0.12),
            major_every: 4,
            park: [6.0, 6.0, 11.0, 11.0],
            items_per_segment: 20.0,
            gps_jitter_m: 6.0,
            stray_word_rate: 0.1,
            retweet_rate: 0.1,
            categories,
            zone_weights,
            no2: [35.0, 30.0, -15.0, 4.0],
            station_every: 4,
        }
    }
}

impl SynthSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if self.grid[0] < 2 || self.grid[1] < 2 {
            return bad("grid needs at least 2x2 intersections".into());
        }
        if self.grid[0] * self.grid[1] > 1_000_000 {
            return bad("grid is too large".into());
        }
        if !(self.block_m > 0.0 && self.block_m.is_finite()) {
            return bad("block_m must be positive".into());
        }
        let extent = self.block_m * (self.grid[0].max(self.grid[1]) - 1) as f64;
        if extent > 100_000.0 {
            return bad("city extent above 100 km".into());
        }
        if !self.origin.is_valid() {
            return bad("origin out of range".into());
        }
        if !(self.items_per_segment >= 0.0 && self.items_per_segment <= 10_000.0) {
            return bad("items_per_segment must be in [0, 10000]".into());
        }
        if !(self.gps_jitter_m >= 0.0 && self.gps_jitter_m.is_finite()) {
            return bad("gps_jitter_m must be non-negative".into());
        }
        for (name, r) in [("stray_word_rate", self.stray_word_rate), ("retweet_rate", self.retweet_rate)] {
            if !(0.0..=1.0).contains(&r) {
                return bad(format!("{name} must be in [0, 1]"));
            }
        }
        if self.park.iter().any(|v| !v.is_finite()) {
            return bad("park bounds must be finite".into());
        }
        if self.no2.iter().any(|v| !v.is_finite()) || self.no2[3] < 0.0 {
            return bad("no2 parameters must be finite with non-negative noise".into());
        }
        if self.categories.is_empty() {
            return bad("at least one category is needed".into());
        }
        let mut seen = BTreeMap::new();
        for (cat, ws) in &self.categories {
            if ws.len() < 3 {
                return bad(format!("category {cat} needs at least three words"));
            }
            for w in ws {
                let norm = crate::lexicon::normalize_term(w);
                if norm.is_empty() || norm != *w {
                    return bad(format!("word {w:?} is not in normalized form"));
                }
                if let Some(prev) = seen.insert(w.clone(), cat.clone()) {
                    return bad(format!("word {w:?} in both {prev} and {cat}"));
                }
            }
        }
        for zone in [Zone::Major, Zone::Park, Zone::Residential] {
            let Some(ws) = self.zone_weights.get(&zone) else {
                return bad(format!("missing weights for zone {zone:?}"));
            };
            let mut total = 0.0;
            for (cat, &w) in ws {
                if !self.categories.contains_key(cat) {
                    return bad(format!("zone weight for unknown category {cat}"));
                }
                if !(w >= 0.0 && w.is_finite()) {
                    return bad(format!("negative or non-finite rate {w} for {cat}"));
                }
                total += w;
            }
            if total <= 0.0 {
                return bad(format!("zone {zone:?} has no positive weight"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentTruth {
    pub id: String,
    pub zone: Zone,
    pub no2: f64,
    /// Expected category shares from the zone weights.
    pub expected: BTreeMap<String, f64>,
    /// Tags generated on this segment per category, retweets excluded.
    pub tags: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub categories: BTreeMap<String, Vec<String>>,
    pub segments: Vec<SegmentTruth>,
    /// Tags per category over the whole city, retweets excluded.
    pub city_tags: BTreeMap<String, u64>,
    pub park_bbox: [f64; 4],
}

impl GroundTruth {
    pub fn word_category(&self) -> BTreeMap<String, String> {
        self.categories
            .iter()
            .flat_map(|(c, ws)| ws.iter().map(move |w| (w.clone(), c.clone())))
            .collect()
    }

    pub fn zone_of(&self, segment: &str) -> Option<Zone> {
        self.segments.iter().find(|s| s.id == segment).map(|s| s.zone)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCity {
    pub spec: SynthSpec,
    pub items: Vec<GeoItem>,
    pub retweet_ids: Vec<String>,
    pub segments: Vec<StreetSegment>,
    pub stations: Vec<StationReading>,
    pub segment_pollution: Vec<SegmentPollution>,
    pub truth: GroundTruth,
}

const FILLER: &[&str] = &["walk", "today", "photo", "street", "city", "morning", "lovely", "corner"];

fn pick_weighted<'a>(rng: &mut ChaCha8Rng, ws: &'a BTreeMap<String, f64>) -> &'a str {
    let total: f64 = ws.values().sum();
    let mut x = rng.gen::<f64>() * total;
    for (k, &w) in ws {
        if x < w {
            return k;
        }
        x -= w;
    }
    ws.iter().rev().find(|(_, &w)| w > 0.0).map(|(k, _)| k.as_str()).expect("positive weight")
}

pub fn generate_synthetic_city(spec: &SynthSpec) -> Result<SyntheticCity> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let proj = LocalProjection::new(spec.origin)?;
    let [nx, ny] = spec.grid;
    let b = spec.block_m;
    let is_major = |line: usize| spec.major_every > 0 && line.is_multiple_of(spec.major_every);
    let in_park = |x: f64, y: f64| {
        let [x0, y0, x1, y1] = spec.park;
        x >= x0 && x <= x1 && y >= y0 && y <= y1
    };

    // Segments: (id, start, end in block units, zone).
    let mut raw: Vec<(String, [f64; 2], [f64; 2], Zone)> = Vec::new();
    for j in 0..ny {
        for i in 0..nx - 1 {
            let (a, c) = ([i as f64, j as f64], [(i + 1) as f64, j as f64]);
            let zone = if is_major(j) {
                Zone::Major
            } else if in_park(i as f64 + 0.5, j as f64) {
                Zone::Park
            } else {
                Zone::Residential
            };
            raw.push((format!("h{j:03}_{i:03}"), a, c, zone));
        }
    }
    for i in 0..nx {
        for j in 0..ny - 1 {
            let (a, c) = ([i as f64, j as f64], [i as f64, (j + 1) as f64]);
            let zone = if is_major(i) {
                Zone::Major
            } else if in_park(i as f64, j as f64 + 0.5) {
                Zone::Park
            } else {
                Zone::Residential
            };
            raw.push((format!("v{i:03}_{j:03}"), a, c, zone));
        }
    }
    raw.sort_by(|x, y| x.0.cmp(&y.0));
    let to_xy = |p: [f64; 2]| -> Xy { [p[0] * b, p[1] * b] };

    let [base, major_shift, park_shift, noise_sd] = spec.no2;
    let noise = Normal::new(0.0, noise_sd).map_err(|e| Error::Validation(e.to_string()))?;
    let jitter = Normal::new(0.0, spec.gps_jitter_m).map_err(|e| Error::Validation(e.to_string()))?;
    let poisson = (spec.items_per_segment > 0.0)
        .then(|| Poisson::new(spec.items_per_segment))
        .transpose()
        .map_err(|e| Error::Validation(e.to_string()))?;
    let cat_names: Vec<&String> = spec.categories.keys().collect();

    let mut segments = Vec::with_capacity(raw.len());
    let mut truths = Vec::with_capacity(raw.len());
    let mut pollution = Vec::with_capacity(raw.len());
    let mut items = Vec::new();
    let mut retweet_ids = Vec::new();
    let mut city_tags: BTreeMap<String, u64> = spec.categories.keys().map(|c| (c.clone(), 0)).collect();
    let mut next_id = 0u64;

    for (id, a, c, zone) in &raw {
        let (pa, pc) = (to_xy(*a), to_xy(*c));
        segments.push(StreetSegment {
            id: id.clone(),
            polyline: vec![proj.unproject(pa), proj.unproject(pc)],
            city: "synthetic".to_string(),
        });
        let shift = match zone {
            Zone::Major => major_shift,
            Zone::Park => park_shift,
            Zone::Residential => 0.0,
        };
        let no2 = (base + shift + noise.sample(&mut rng)).max(0.0);
        pollution.push(SegmentPollution {
            segment_id: id.clone(),
            pollutant: Pollutant::No2,
            concentration: no2,
        });
        let zw = &spec.zone_weights[zone];
        let total: f64 = zw.values().sum();
        let expected = spec
            .categories
            .keys()
            .map(|k| (k.clone(), zw.get(k).copied().unwrap_or(0.0) / total))
            .collect();
        let mut tags: BTreeMap<String, u64> = spec.categories.keys().map(|c| (c.clone(), 0)).collect();

        let count = poisson.as_ref().map_or(0, |p| p.sample(&mut rng) as u64);
        let dir = [pc[0] - pa[0], pc[1] - pa[1]];
        let len = dir[0].hypot(dir[1]);
        let (ux, uy) = (dir[0] / len, dir[1] / len);
        for _ in 0..count {
            let t = rng.gen_range(0.15..0.85);
            let along = jitter.sample(&mut rng);
            let across = jitter.sample(&mut rng);
            let p = [
                pa[0] + dir[0] * t + ux * along - uy * across,
                pa[1] + dir[1] * t + uy * along + ux * across,
            ];
            let cat = pick_weighted(&mut rng, zw);
            let k = rng.gen_range(2..=3).min(spec.categories[cat].len());
            let mut chosen: Vec<(&str, &str)> = spec.categories[cat]
                .choose_multiple(&mut rng, k)
                .map(|w| (w.as_str(), cat))
                .collect();
            if rng.gen_bool(spec.stray_word_rate) && cat_names.len() > 1 {
                let other = loop {
                    let o = cat_names[rng.gen_range(0..cat_names.len())];
                    if o != cat {
                        break o;
                    }
                };
                let w = spec.categories[other].choose(&mut rng).expect("non-empty");
                chosen.push((w.as_str(), other.as_str()));
            }
            let source = Source::ALL[rng.gen_range(0..3)];
            let retweet = source == Source::Twitter && rng.gen_bool(spec.retweet_rate);
            let mut text_words: Vec<String> = chosen.iter().map(|(w, _)| w.to_string()).collect();
            text_words.push(FILLER[rng.gen_range(0..FILLER.len())].to_string());
            text_words.shuffle(&mut rng);
            let loc = proj.unproject(p);
            let item_id = format!("i{next_id:07}");
            next_id += 1;
            if retweet {
                retweet_ids.push(item_id.clone());
            } else {
                for (_, c) in &chosen {
                    *tags.get_mut(*c).expect("known") += 1;
                    *city_tags.get_mut(*c).expect("known") += 1;
                }
            }
            items.push(GeoItem {
                id: item_id,
                source,
                user: format!("u{:04}", rng.gen_range(0..2000)),
                lat: loc.lat,
                lon: loc.lon,
                timestamp: 1_400_000_000 + rng.gen_range(0..50_000_000),
                text: format!("#{}", text_words.join(", ")),
                language: "en".into(),
            });
        }
        truths.push(SegmentTruth {
            id: id.clone(),
            zone: *zone,
            no2,
            expected,
            tags,
        });
    }

    let table = BandTable::default();
    let mut stations = Vec::new();
    if spec.station_every > 0 {
        for i in (0..nx).step_by(spec.station_every) {
            for j in (0..ny).step_by(spec.station_every) {
                let xy = to_xy([i as f64, j as f64]);
                // Average of the segments meeting at this intersection.
                let near: Vec<f64> = raw
                    .iter()
                    .zip(&truths)
                    .filter(|((_, a, c, _), _)| *a == [i as f64, j as f64] || *c == [i as f64, j as f64])
                    .map(|(_, t)| t.no2)
                    .collect();
                let conc = near.iter().sum::<f64>() / near.len().max(1) as f64;
                stations.push(StationReading {
                    station_id: format!("st{i:03}_{j:03}"),
                    location: proj.unproject(xy),
                    pollutant: Pollutant::No2,
                    aqi: compute_aqi(Pollutant::No2, conc, &table)?,
                    concentration: Some(conc),
                });
            }
        }
    }

    Ok(SyntheticCity {
        spec: spec.clone(),
        items,
        retweet_ids,
        segments,
        stations,
        segment_pollution: pollution,
        truth: GroundTruth {
            seed: spec.seed,
            categories: spec.categories.clone(),
            segments: truths,
            city_tags,
            park_bbox: [spec.park[0] * b, spec.park[1] * b, spec.park[2] * b, spec.park[3] * b],
        },
    })
}

/// File names written by [`write_synthetic_city`].
pub mod files {
    pub const ITEMS: &str = "items.ndjson";
    pub const SEGMENTS: &str = "segments.geojson";
    pub const AIR_QUALITY: &str = "air_quality.csv";
    pub const GROUND_TRUTH: &str = "ground_truth.json";
    pub const LEXICON: &str = "lexicon.csv";
    pub const LABELS: &str = "labels.json";
    pub const MERGE_SPEC: &str = "merge.json";
    pub const CONFIG: &str = "config.toml";
}

fn create(dir: &Path, name: &str) -> Result<std::io::BufWriter<std::fs::File>> {
    let path = dir.join(name);
    std::fs::File::create(&path)
        .map(std::io::BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn finish(mut w: std::io::BufWriter<std::fs::File>, name: &str) -> Result<()> {
    w.flush().map_err(|e| Error::io(name, e))
}

/// Write items, segments, air quality, lexicon, labels, an empty merge
/// spec, a pipeline config and the ground truth into `dir`.
pub fn write_synthetic_city(city: &SyntheticCity, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let retweets: std::collections::BTreeSet<&str> = city.retweet_ids.iter().map(String::as_str).collect();

    let mut w = create(dir, files::ITEMS)?;
    for item in &city.items {
        let mut v = serde_json::to_value(item)?;
        if retweets.contains(item.id.as_str()) {
            v["is_retweet"] = serde_json::Value::Bool(true);
        }
        serde_json::to_writer(&mut w, &v)?;
        w.write_all(b"\n").map_err(|e| Error::io(files::ITEMS, e))?;
    }
    finish(w, files::ITEMS)?;

    let w = create(dir, files::SEGMENTS)?;
    write_segments(w, &city.segments)?;

    let w = create(dir, files::AIR_QUALITY)?;
    write_air_quality(w, &city.stations, &city.segment_pollution)?;

    let terms = city
        .truth
        .categories
        .iter()
        .flat_map(|(cat, ws)| {
            ws.iter().map(move |w| SmellTerm {
                surface: w.clone(),
                language: "en".into(),
                notes: Some(cat.clone()),
            })
        })
        .collect();
    let w = create(dir, files::LEXICON)?;
    write_lexicon(w, &SmellLexicon::new(terms, "synthetic")?)?;

    let labels: BTreeMap<String, String> = city
        .truth
        .categories
        .iter()
        .map(|(c, ws)| (format!("word:{}", ws[0]), c.clone()))
        .collect();
    let mut w = create(dir, files::LABELS)?;
    serde_json::to_writer_pretty(&mut w, &labels)?;
    w.write_all(b"\n").map_err(|e| Error::io(files::LABELS, e))?;
    finish(w, files::LABELS)?;

    let mut w = create(dir, files::MERGE_SPEC)?;
    w.write_all(b"[]\n").map_err(|e| Error::io(files::MERGE_SPEC, e))?;
    finish(w, files::MERGE_SPEC)?;

    let mut w = create(dir, files::GROUND_TRUTH)?;
    serde_json::to_writer_pretty(&mut w, &city.truth)?;
    w.write_all(b"\n").map_err(|e| Error::io(files::GROUND_TRUTH, e))?;
    finish(w, files::GROUND_TRUTH)?;

    let config = format!(
        "# Synthetic city, seed {seed}.\n\
         seed = {seed}\n\
         output_dir = \"out\"\n\
         sweep_sizes = [10.0, 25.0, 50.0, 100.0]\n\
         sweep_pairs = [[\"emissions\", \"NO2\"], [\"nature\", \"NO2\"]]\n\
         \n\
         [inputs]\n\
         items = [\"{items}\"]\n\
         segments = \"{segments}\"\n\
         air_quality = \"{aq}\"\n\
         lexicon = \"{lexicon}\"\n\
         labels = \"{labels}\"\n\
         merge_spec = \"{merge}\"\n",
        seed = city.spec.seed,
        items = files::ITEMS,
        segments = files::SEGMENTS,
        aq = files::AIR_QUALITY,
        lexicon = files::LEXICON,
        labels = files::LABELS,
        merge = files::MERGE_SPEC,
    );
    let mut w = create(dir, files::CONFIG)?;
    w.write_all(config.as_bytes()).map_err(|e| Error::io(files::CONFIG, e))?;
    finish(w, files::CONFIG)
}
