//! Readers and writers for social-media dumps, street segments and
//! air-quality tables.
//!
//! Bad records never abort a read: each reader returns the valid records
//! together with a [`ReadReport`] listing what was skipped and why.
//! Only an unreadable file is fatal.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{BBox, LatLon};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Flickr,
    Instagram,
    Twitter,
    Other,
}

impl Source {
    pub const ALL: [Source; 4] = [
        Source::Flickr,
        Source::Instagram,
        Source::Twitter,
        Source::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Source::Flickr => "flickr",
            Source::Instagram => "instagram",
            Source::Twitter => "twitter",
            Source::Other => "other",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Source {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Source::ALL
            .into_iter()
            .find(|src| src.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Parse(format!("unknown source {s:?}")))
    }
}

/// One geo-referenced social-media record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoItem {
    pub id: String,
    pub source: Source,
    pub user: String,
    pub lat: f64,
    pub lon: f64,
    #[serde(rename = "ts")]
    pub timestamp: i64,
    pub text: String,
    #[serde(rename = "lang")]
    pub language: String,
}

impl GeoItem {
    pub fn location(&self) -> LatLon {
        LatLon::new(self.lat, self.lon)
    }
}

/// Raw NDJSON record, before validation.
#[derive(Debug, Deserialize)]
struct ItemRecord {
    id: serde_json::Value,
    #[serde(default)]
    source: Option<String>,
    #[serde(default)]
    user: Option<String>,
    lat: f64,
    lon: f64,
    ts: i64,
    #[serde(default)]
    text: String,
    lang: String,
    #[serde(default)]
    is_retweet: Option<bool>,
    #[serde(default)]
    is_reply: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum SkipReason {
    /// Not parseable at all.
    Malformed(String),
    /// Parseable but violates a domain rule.
    Invalid(String),
    DuplicateId(String),
    RetweetOrReply,
    OutsideBbox,
    SourceMismatch(String),
}

impl SkipReason {
    pub fn kind(&self) -> &'static str {
        match self {
            SkipReason::Malformed(_) => "malformed",
            SkipReason::Invalid(_) => "invalid",
            SkipReason::DuplicateId(_) => "duplicate_id",
            SkipReason::RetweetOrReply => "retweet_or_reply",
            SkipReason::OutsideBbox => "outside_bbox",
            SkipReason::SourceMismatch(_) => "source_mismatch",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Skipped {
    /// 1-based line (or row, or feature) number.
    pub record: usize,
    pub reason: SkipReason,
}

/// Per-read bookkeeping: `parsed + skipped.len() == records`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ReadReport {
    pub records: usize,
    pub parsed: usize,
    pub skipped: Vec<Skipped>,
}

impl ReadReport {
    fn skip(&mut self, record: usize, reason: SkipReason) {
        log::debug!("skipping record {record}: {reason:?}");
        self.skipped.push(Skipped { record, reason });
    }

    /// Skip counts grouped by reason kind.
    pub fn skip_counts(&self) -> BTreeMap<&'static str, usize> {
        let mut out = BTreeMap::new();
        for s in &self.skipped {
            *out.entry(s.reason.kind()).or_insert(0) += 1;
        }
        out
    }

    pub fn is_consistent(&self) -> bool {
        self.parsed + self.skipped.len() == self.records
    }
}

#[derive(Debug, Clone, Default)]
pub struct ItemFilter {
    /// Default source for records without one; records naming a different
    /// source are skipped.
    pub source: Option<Source>,
    /// Drop Twitter records flagged `is_retweet` or `is_reply`.
    pub drop_retweets_and_replies: bool,
    pub bbox: Option<BBox>,
}

#[derive(Debug, Clone, Default)]
pub struct ItemBatch {
    pub items: Vec<GeoItem>,
    pub report: ReadReport,
}

fn id_string(v: &serde_json::Value) -> Option<String> {
    match v {
        serde_json::Value::String(s) if !s.is_empty() => Some(s.clone()),
        serde_json::Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

/// Parse and validate a single NDJSON item line.
///
/// Returns the item plus the retweet/reply flags; filters are applied by
/// the caller.
pub fn parse_item_line(
    line: &str,
    default_source: Option<Source>,
) -> std::result::Result<(GeoItem, bool), SkipReason> {
    let rec: ItemRecord =
        serde_json::from_str(line).map_err(|e| SkipReason::Malformed(e.to_string()))?;
    let id = id_string(&rec.id)
        .ok_or_else(|| SkipReason::Invalid("id must be a non-empty string or number".into()))?;
    let source = match (&rec.source, default_source) {
        (Some(s), expected) => {
            let s: Source = s.parse().map_err(|e: Error| SkipReason::Invalid(e.to_string()))?;
            if let Some(expected) = expected {
                if s != expected {
                    return Err(SkipReason::SourceMismatch(format!(
                        "record says {s}, expected {expected}"
                    )));
                }
            }
            s
        }
        (None, Some(expected)) => expected,
        (None, None) => return Err(SkipReason::Invalid("missing source".into())),
    };
    if !(rec.lat.is_finite() && (-90.0..=90.0).contains(&rec.lat)) {
        return Err(SkipReason::Invalid(format!("latitude {} out of range", rec.lat)));
    }
    if !(rec.lon.is_finite() && (-180.0..=180.0).contains(&rec.lon)) {
        return Err(SkipReason::Invalid(format!("longitude {} out of range", rec.lon)));
    }
    let language = rec.lang.trim().to_ascii_lowercase();
    if !crate::lexicon::is_language_code(&language) {
        return Err(SkipReason::Invalid(format!("unknown language {:?}", rec.lang)));
    }
    let flagged = rec.is_retweet.unwrap_or(false) || rec.is_reply.unwrap_or(false);
    Ok((
        GeoItem {
            id,
            source,
            user: rec.user.unwrap_or_default(),
            lat: rec.lat,
            lon: rec.lon,
            timestamp: rec.ts,
            text: rec.text,
            language,
        },
        flagged,
    ))
}

/// Read NDJSON items from any reader. Blank lines are ignored and not
/// counted as records.
pub fn parse_items<R: Read>(reader: R, filter: &ItemFilter) -> Result<ItemBatch> {
    let mut batch = ItemBatch::default();
    let mut ids = HashSet::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|e| Error::io("<items>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 1;
        batch.report.records += 1;
        let (item, flagged) = match parse_item_line(&line, filter.source) {
            Ok(v) => v,
            Err(reason) => {
                batch.report.skip(lineno, reason);
                continue;
            }
        };
        if filter.drop_retweets_and_replies && item.source == Source::Twitter && flagged {
            batch.report.skip(lineno, SkipReason::RetweetOrReply);
            continue;
        }
        if let Some(bbox) = &filter.bbox {
            if !bbox.contains(item.location()) {
                batch.report.skip(lineno, SkipReason::OutsideBbox);
                continue;
            }
        }
        if !ids.insert(item.id.clone()) {
            batch.report.skip(lineno, SkipReason::DuplicateId(item.id));
            continue;
        }
        batch.report.parsed += 1;
        batch.items.push(item);
    }
    Ok(batch)
}

pub fn read_items(path: impl AsRef<Path>, filter: &ItemFilter) -> Result<ItemBatch> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_items(file, filter)
}

pub fn write_items<W: Write>(mut writer: W, items: &[GeoItem]) -> Result<()> {
    for item in items {
        serde_json::to_writer(&mut writer, item)?;
        writer
            .write_all(b"\n")
            .map_err(|e| Error::io("<items writer>", e))?;
    }
    Ok(())
}

/// A street portion between two intersections.
#[derive(Debug, Clone, PartialEq)]
pub struct StreetSegment {
    pub id: String,
    pub polyline: Vec<LatLon>,
    pub city: String,
}

#[derive(Debug, Clone, Default)]
pub struct SegmentBatch {
    pub segments: Vec<StreetSegment>,
    pub report: ReadReport,
}

fn property_string(props: Option<&geojson::JsonObject>, key: &str) -> Option<String> {
    props.and_then(|p| p.get(key)).and_then(id_string)
}

fn feature_to_segment(
    feature: &geojson::Feature,
) -> std::result::Result<StreetSegment, SkipReason> {
    let id = property_string(feature.properties.as_ref(), "id")
        .or_else(|| match &feature.id {
            Some(geojson::feature::Id::String(s)) if !s.is_empty() => Some(s.clone()),
            Some(geojson::feature::Id::Number(n)) => Some(n.to_string()),
            _ => None,
        })
        .ok_or_else(|| SkipReason::Invalid("feature has no properties.id".into()))?;
    let geometry = feature
        .geometry
        .as_ref()
        .ok_or_else(|| SkipReason::Invalid(format!("segment {id}: null geometry")))?;
    let coords = match &geometry.value {
        geojson::Value::LineString(c) => c,
        other => {
            return Err(SkipReason::Invalid(format!(
                "segment {id}: expected LineString, got {}",
                other.type_name()
            )))
        }
    };
    let mut polyline: Vec<LatLon> = Vec::with_capacity(coords.len());
    for pos in coords {
        if pos.len() < 2 {
            return Err(SkipReason::Invalid(format!("segment {id}: short position")));
        }
        let p = LatLon::new(pos[1], pos[0]);
        if !p.is_valid() {
            return Err(SkipReason::Invalid(format!(
                "segment {id}: coordinate ({}, {}) out of range",
                pos[0], pos[1]
            )));
        }
        if polyline.last() != Some(&p) {
            polyline.push(p);
        }
    }
    if polyline.len() < 2 {
        return Err(SkipReason::Invalid(format!(
            "segment {id}: degenerate (zero-length) geometry"
        )));
    }
    let city = property_string(feature.properties.as_ref(), "city").unwrap_or_default();
    Ok(StreetSegment { id, polyline, city })
}

/// Parse a GeoJSON FeatureCollection of LineString street segments.
///
/// Consecutive repeated vertices are collapsed; features that collapse to
/// fewer than two distinct vertices are skipped as degenerate.
pub fn parse_segments(text: &str) -> Result<SegmentBatch> {
    let gj: geojson::GeoJson = text
        .parse()
        .map_err(|e: geojson::Error| Error::Parse(format!("segments GeoJSON: {e}")))?;
    let features = match gj {
        geojson::GeoJson::FeatureCollection(fc) => fc.features,
        geojson::GeoJson::Feature(f) => vec![f],
        geojson::GeoJson::Geometry(_) => {
            return Err(Error::Parse(
                "segments GeoJSON must be a FeatureCollection".into(),
            ))
        }
    };
    let mut batch = SegmentBatch::default();
    let mut ids = HashSet::new();
    for (i, feature) in features.iter().enumerate() {
        batch.report.records += 1;
        match feature_to_segment(feature) {
            Ok(seg) => {
                if !ids.insert(seg.id.clone()) {
                    batch.report.skip(i + 1, SkipReason::DuplicateId(seg.id));
                    continue;
                }
                batch.report.parsed += 1;
                batch.segments.push(seg);
            }
            Err(reason) => batch.report.skip(i + 1, reason),
        }
    }
    Ok(batch)
}

pub fn read_segments(path: impl AsRef<Path>) -> Result<SegmentBatch> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_segments(&text)
}

pub fn segment_feature(seg: &StreetSegment, properties: geojson::JsonObject) -> geojson::Feature {
    let coords: Vec<Vec<f64>> = seg.polyline.iter().map(|p| vec![p.lon, p.lat]).collect();
    geojson::Feature {
        bbox: None,
        geometry: Some(geojson::Geometry::new(geojson::Value::LineString(coords))),
        id: None,
        properties: Some(properties),
        foreign_members: None,
    }
}

pub fn segments_to_geojson(segments: &[StreetSegment]) -> geojson::FeatureCollection {
    let features = segments
        .iter()
        .map(|s| {
            let mut props = geojson::JsonObject::new();
            props.insert("id".into(), s.id.clone().into());
            if !s.city.is_empty() {
                props.insert("city".into(), s.city.clone().into());
            }
            segment_feature(s, props)
        })
        .collect();
    geojson::FeatureCollection {
        bbox: None,
        features,
        foreign_members: None,
    }
}

pub fn write_segments<W: Write>(writer: W, segments: &[StreetSegment]) -> Result<()> {
    serde_json::to_writer(writer, &segments_to_geojson(segments))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Pollutant {
    #[serde(rename = "CO")]
    Co,
    #[serde(rename = "NO2")]
    No2,
    #[serde(rename = "O3")]
    O3,
    #[serde(rename = "PM10")]
    Pm10,
    #[serde(rename = "PM2.5")]
    Pm25,
    #[serde(rename = "SO2")]
    So2,
}

impl Pollutant {
    pub const ALL: [Pollutant; 6] = [
        Pollutant::Co,
        Pollutant::No2,
        Pollutant::O3,
        Pollutant::Pm10,
        Pollutant::Pm25,
        Pollutant::So2,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Pollutant::Co => "CO",
            Pollutant::No2 => "NO2",
            Pollutant::O3 => "O3",
            Pollutant::Pm10 => "PM10",
            Pollutant::Pm25 => "PM2.5",
            Pollutant::So2 => "SO2",
        }
    }
}

impl fmt::Display for Pollutant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Pollutant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("PM25") {
            return Ok(Pollutant::Pm25);
        }
        Pollutant::ALL
            .into_iter()
            .find(|p| p.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Parse(format!("unknown pollutant {s:?}")))
    }
}

/// An AQI reading from a monitoring station.
#[derive(Debug, Clone, PartialEq)]
pub struct StationReading {
    pub station_id: String,
    pub location: LatLon,
    pub pollutant: Pollutant,
    pub aqi: u32,
    /// µg/m³, when the station reports it.
    pub concentration: Option<f64>,
}

/// A modelled per-street concentration (µg/m³).
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentPollution {
    pub segment_id: String,
    pub pollutant: Pollutant,
    pub concentration: f64,
}

#[derive(Debug, Clone, Default)]
pub struct AirQuality {
    pub stations: Vec<StationReading>,
    pub segments: Vec<SegmentPollution>,
    pub report: ReadReport,
}

impl AirQuality {
    /// Per-segment concentrations of one pollutant, keyed by segment id.
    pub fn segment_field(&self, pollutant: Pollutant) -> BTreeMap<String, f64> {
        self.segments
            .iter()
            .filter(|s| s.pollutant == pollutant)
            .map(|s| (s.segment_id.clone(), s.concentration))
            .collect()
    }

    pub fn pollutants(&self) -> Vec<Pollutant> {
        let mut out: Vec<Pollutant> = self
            .segments
            .iter()
            .map(|s| s.pollutant)
            .chain(self.stations.iter().map(|s| s.pollutant))
            .collect();
        out.sort();
        out.dedup();
        out
    }
}

const AIR_QUALITY_HEADER: [&str; 6] = [
    "station_or_segment_id",
    "lat",
    "lon",
    "pollutant",
    "aqi",
    "concentration",
];

enum AirRow {
    Station(StationReading),
    Segment(SegmentPollution),
}

fn parse_opt_f64(field: &str, name: &str) -> std::result::Result<Option<f64>, SkipReason> {
    if field.is_empty() {
        return Ok(None);
    }
    field
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .map(Some)
        .ok_or_else(|| SkipReason::Malformed(format!("{name} {field:?} is not a number")))
}

fn parse_air_row(rec: &csv::StringRecord) -> std::result::Result<AirRow, SkipReason> {
    if rec.len() != 6 {
        return Err(SkipReason::Malformed(format!(
            "expected 6 fields, got {}",
            rec.len()
        )));
    }
    let id = rec[0].to_string();
    if id.is_empty() {
        return Err(SkipReason::Invalid("empty id".into()));
    }
    let pollutant: Pollutant = rec[3]
        .parse()
        .map_err(|e: Error| SkipReason::Invalid(e.to_string()))?;
    let lat = parse_opt_f64(&rec[1], "lat")?;
    let lon = parse_opt_f64(&rec[2], "lon")?;
    let concentration = parse_opt_f64(&rec[5], "concentration")?;
    if let Some(c) = concentration {
        if c < 0.0 {
            return Err(SkipReason::Invalid(format!("negative concentration {c}")));
        }
    }
    match (lat, lon) {
        (Some(lat), Some(lon)) => {
            let location = LatLon::new(lat, lon);
            if !location.is_valid() {
                return Err(SkipReason::Invalid(format!("station {id} out of range")));
            }
            let aqi: u32 = rec[4]
                .parse()
                .map_err(|_| SkipReason::Malformed(format!("aqi {:?} is not an integer", &rec[4])))?;
            if aqi < 1 {
                return Err(SkipReason::Invalid("aqi must be >= 1".into()));
            }
            Ok(AirRow::Station(StationReading {
                station_id: id,
                location,
                pollutant,
                aqi,
                concentration,
            }))
        }
        (None, None) => {
            let concentration = concentration.ok_or_else(|| {
                SkipReason::Invalid(format!("segment row {id} has no concentration"))
            })?;
            Ok(AirRow::Segment(SegmentPollution {
                segment_id: id,
                pollutant,
                concentration,
            }))
        }
        _ => Err(SkipReason::Invalid("lat and lon must both be set or both empty".into())),
    }
}

/// Parse the air-quality CSV. Rows with a location are station readings,
/// rows without are per-segment concentrations.
pub fn parse_air_quality<R: Read>(reader: R) -> Result<AirQuality> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != AIR_QUALITY_HEADER {
        return Err(Error::Parse(format!(
            "air-quality header must be {}",
            AIR_QUALITY_HEADER.join(",")
        )));
    }
    let mut out = AirQuality::default();
    for (i, rec) in rdr.records().enumerate() {
        out.report.records += 1;
        let row = i + 2;
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                out.report.skip(row, SkipReason::Malformed(e.to_string()));
                continue;
            }
        };
        match parse_air_row(&rec) {
            Ok(AirRow::Station(s)) => {
                out.report.parsed += 1;
                out.stations.push(s);
            }
            Ok(AirRow::Segment(s)) => {
                out.report.parsed += 1;
                out.segments.push(s);
            }
            Err(reason) => out.report.skip(row, reason),
        }
    }
    Ok(out)
}

pub fn read_air_quality(path: impl AsRef<Path>) -> Result<AirQuality> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_air_quality(file)
}

pub fn write_air_quality<W: Write>(
    writer: W,
    stations: &[StationReading],
    segments: &[SegmentPollution],
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(AIR_QUALITY_HEADER)?;
    for s in stations {
        wtr.write_record([
            s.station_id.clone(),
            s.location.lat.to_string(),
            s.location.lon.to_string(),
            s.pollutant.to_string(),
            s.aqi.to_string(),
            s.concentration.map(|c| c.to_string()).unwrap_or_default(),
        ])?;
    }
    for s in segments {
        wtr.write_record([
            s.segment_id.clone(),
            String::new(),
            String::new(),
            s.pollutant.to_string(),
            String::new(),
            s.concentration.to_string(),
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("<air-quality writer>", e))?;
    Ok(())
}

/// Upper band bounds (µg/m³) per pollutant for the 1..10+ index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BandTable {
    bounds: BTreeMap<Pollutant, Vec<f64>>,
}

impl BandTable {
    pub fn new(bounds: BTreeMap<Pollutant, Vec<f64>>) -> Result<Self> {
        for (p, b) in &bounds {
            if b.is_empty() {
                return Err(Error::invalid(format!("band table for {p} is empty")));
            }
            if b.iter().any(|v| !v.is_finite()) || b.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::invalid(format!(
                    "band table for {p} must be strictly increasing and finite"
                )));
            }
        }
        Ok(Self { bounds })
    }

    pub fn bounds(&self, pollutant: Pollutant) -> Option<&[f64]> {
        self.bounds.get(&pollutant).map(Vec::as_slice)
    }

    /// Parse a JSON object mapping pollutant codes to bound lists.
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: BTreeMap<Pollutant, Vec<f64>> = serde_json::from_str(text)?;
        Self::new(raw)
    }
}

impl Default for BandTable {
    /// Ten bands per pollutant: nine upper bounds plus an open top band.
    ///
    /// NO2, O3, SO2, PM10 and PM2.5 follow the UK Daily Air Quality Index
    /// breakpoints. CO is not part of that index; its bounds are linear
    /// steps of 1 mg/m³ up to the 10 mg/m³ eight-hour limit value.
    fn default() -> Self {
        let table = [
            (Pollutant::No2, vec![67.0, 134.0, 200.0, 267.0, 334.0, 400.0, 467.0, 534.0, 600.0]),
            (Pollutant::O3, vec![33.0, 66.0, 100.0, 120.0, 140.0, 160.0, 187.0, 213.0, 240.0]),
            (Pollutant::So2, vec![88.0, 177.0, 266.0, 354.0, 443.0, 532.0, 710.0, 887.0, 1064.0]),
            (Pollutant::Pm10, vec![16.0, 33.0, 50.0, 58.0, 66.0, 75.0, 83.0, 91.0, 100.0]),
            (Pollutant::Pm25, vec![11.0, 23.0, 35.0, 41.0, 47.0, 53.0, 58.0, 64.0, 70.0]),
            (
                Pollutant::Co,
                (1..=9).map(|k| 1000.0 * k as f64).collect(),
            ),
        ];
        Self::new(table.into_iter().collect()).expect("default band table is valid")
    }
}

/// Band index (1-based) of a concentration. A value equal to a bound
/// belongs to that bound's band; values above the last bound fall in the
/// overflow band `bounds.len() + 1`.
pub fn compute_aqi(pollutant: Pollutant, concentration: f64, table: &BandTable) -> Result<u32> {
    if concentration.is_nan() || concentration < 0.0 {
        return Err(Error::invalid(format!(
            "concentration must be >= 0, got {concentration}"
        )));
    }
    let bounds = table
        .bounds(pollutant)
        .ok_or_else(|| Error::invalid(format!("no band table for {pollutant}")))?;
    let band = bounds.partition_point(|&b| b < concentration);
    Ok(band as u32 + 1)
}
