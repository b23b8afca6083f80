//! Local planar projection, polyline buffers and the segment index used to
//! attribute geo-items and stations to street segments.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rstar::primitives::{GeomWithData, Rectangle};
use rstar::{RTree, AABB};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::StreetSegment;

/// Mean Earth radius in metres.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Largest distance from the projection origin we accept, in metres. City
/// extents stay well inside this; the slack admits one-degree offsets.
pub const MAX_EXTENT_M: f64 = 150_000.0;

/// Default buffer half-width around each street polyline, in metres.
pub const DEFAULT_BUFFER_M: f64 = 22.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatLon {
    pub lat: f64,
    pub lon: f64,
}

impl LatLon {
    pub const fn new(lat: f64, lon: f64) -> Self {
        Self { lat, lon }
    }

    pub fn is_valid(&self) -> bool {
        self.lat.is_finite()
            && self.lon.is_finite()
            && (-90.0..=90.0).contains(&self.lat)
            && (-180.0..=180.0).contains(&self.lon)
    }
}

/// WGS84 bounding box, serialized GeoJSON-style as
/// `[min_lon, min_lat, max_lon, max_lat]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub min_lon: f64,
    pub min_lat: f64,
    pub max_lon: f64,
    pub max_lat: f64,
}

impl BBox {
    pub fn new(min_lon: f64, min_lat: f64, max_lon: f64, max_lat: f64) -> Self {
        Self {
            min_lon,
            min_lat,
            max_lon,
            max_lat,
        }
    }

    pub fn contains(&self, p: LatLon) -> bool {
        (self.min_lat..=self.max_lat).contains(&p.lat)
            && (self.min_lon..=self.max_lon).contains(&p.lon)
    }

    pub fn centroid(&self) -> LatLon {
        LatLon::new(
            0.5 * (self.min_lat + self.max_lat),
            0.5 * (self.min_lon + self.max_lon),
        )
    }

    /// Smallest box holding all points, or `None` for an empty iterator.
    pub fn enclosing(points: impl IntoIterator<Item = LatLon>) -> Option<Self> {
        points.into_iter().fold(None, |acc, p| {
            Some(match acc {
                None => BBox::new(p.lon, p.lat, p.lon, p.lat),
                Some(b) => BBox::new(
                    b.min_lon.min(p.lon),
                    b.min_lat.min(p.lat),
                    b.max_lon.max(p.lon),
                    b.max_lat.max(p.lat),
                ),
            })
        })
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = String;

    fn try_from(v: [f64; 4]) -> std::result::Result<Self, String> {
        let b = BBox::new(v[0], v[1], v[2], v[3]);
        if !(LatLon::new(b.min_lat, b.min_lon).is_valid()
            && LatLon::new(b.max_lat, b.max_lon).is_valid())
        {
            return Err(format!("bbox {v:?} has out-of-range coordinates"));
        }
        if b.min_lon > b.max_lon || b.min_lat > b.max_lat {
            return Err(format!("bbox {v:?} must be [min_lon, min_lat, max_lon, max_lat]"));
        }
        Ok(b)
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.min_lon, b.min_lat, b.max_lon, b.max_lat]
    }
}

/// Projected planar point in metres (x east, y north).
pub type Xy = [f64; 2];

/// Equirectangular projection around a city-scale origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalProjection {
    origin: LatLon,
    m_per_deg_lat: f64,
    m_per_deg_lon: f64,
}

impl LocalProjection {
    pub fn new(origin: LatLon) -> Result<Self> {
        if !origin.is_valid() || origin.lat.abs() >= 89.0 {
            return Err(Error::invalid(format!(
                "projection origin ({}, {}) unusable",
                origin.lat, origin.lon
            )));
        }
        let k = std::f64::consts::PI / 180.0 * EARTH_RADIUS_M;
        Ok(Self {
            origin,
            m_per_deg_lat: k,
            m_per_deg_lon: k * origin.lat.to_radians().cos(),
        })
    }

    pub fn origin(&self) -> LatLon {
        self.origin
    }

    pub fn project(&self, p: LatLon) -> Result<Xy> {
        let xy = [
            (p.lon - self.origin.lon) * self.m_per_deg_lon,
            (p.lat - self.origin.lat) * self.m_per_deg_lat,
        ];
        if !p.is_valid() || xy[0].hypot(xy[1]) > MAX_EXTENT_M {
            return Err(Error::invalid(format!(
                "point ({}, {}) is outside the {} km projection extent",
                p.lat,
                p.lon,
                MAX_EXTENT_M / 1000.0
            )));
        }
        Ok(xy)
    }

    pub fn unproject(&self, xy: Xy) -> LatLon {
        LatLon::new(
            self.origin.lat + xy[1] / self.m_per_deg_lat,
            self.origin.lon + xy[0] / self.m_per_deg_lon,
        )
    }
}

fn dist(a: Xy, b: Xy) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Distance from `p` to the closed segment `a`–`b`.
pub fn point_line_distance(p: Xy, a: Xy, b: Xy) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return dist(p, a);
    }
    let t = (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0);
    dist(p, [a[0] + t * dx, a[1] + t * dy])
}

/// Minimum distance from `p` to any piece of `polyline`.
pub fn point_segment_distance(p: Xy, polyline: &[Xy]) -> f64 {
    match polyline {
        [] => f64::INFINITY,
        [only] => dist(p, *only),
        _ => polyline
            .windows(2)
            .map(|w| point_line_distance(p, w[0], w[1]))
            .fold(f64::INFINITY, f64::min),
    }
}

pub fn polyline_length(polyline: &[Xy]) -> f64 {
    polyline.windows(2).map(|w| dist(w[0], w[1])).sum()
}

/// Point halfway along the polyline.
pub fn polyline_midpoint(polyline: &[Xy]) -> Xy {
    let half = 0.5 * polyline_length(polyline);
    let mut walked = 0.0;
    for w in polyline.windows(2) {
        let l = dist(w[0], w[1]);
        if walked + l >= half && l > 0.0 {
            let t = (half - walked) / l;
            return [
                w[0][0] + t * (w[1][0] - w[0][0]),
                w[0][1] + t * (w[1][1] - w[0][1]),
            ];
        }
        walked += l;
    }
    polyline.last().copied().unwrap_or([0.0, 0.0])
}

/// A projected street segment with its buffer half-width.
#[derive(Debug, Clone, PartialEq)]
pub struct BufferedSegment {
    pub id: String,
    pub polyline: Vec<Xy>,
    pub buffer_width: f64,
}

impl BufferedSegment {
    pub fn contains(&self, p: Xy) -> bool {
        point_segment_distance(p, &self.polyline) <= self.buffer_width
    }

    pub fn midpoint(&self) -> Xy {
        polyline_midpoint(&self.polyline)
    }
}

/// A street segment projected to local metres.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedSegment {
    pub id: String,
    pub polyline: Vec<Xy>,
}

impl ProjectedSegment {
    pub fn midpoint(&self) -> Xy {
        polyline_midpoint(&self.polyline)
    }
}

pub fn project_segments(
    segments: &[StreetSegment],
    proj: &LocalProjection,
) -> Result<Vec<ProjectedSegment>> {
    segments
        .iter()
        .map(|s| {
            Ok(ProjectedSegment {
                id: s.id.clone(),
                polyline: s
                    .polyline
                    .iter()
                    .map(|p| proj.project(*p))
                    .collect::<Result<_>>()?,
            })
        })
        .collect()
}

type PieceEntry = GeomWithData<Rectangle<Xy>, usize>;

/// R-tree over the buffered pieces (consecutive vertex pairs) of every
/// segment. Queries filter the bounding-box candidates by exact distance.
#[derive(Debug)]
pub struct SpatialIndex {
    segments: Vec<BufferedSegment>,
    tree: RTree<PieceEntry>,
}

pub fn build_index(segments: &[ProjectedSegment], buffer_width: f64) -> Result<SpatialIndex> {
    if !(buffer_width.is_finite() && buffer_width > 0.0) {
        return Err(Error::invalid(format!(
            "buffer width must be > 0, got {buffer_width}"
        )));
    }
    let mut entries = Vec::new();
    let buffered: Vec<BufferedSegment> = segments
        .iter()
        .map(|s| BufferedSegment {
            id: s.id.clone(),
            polyline: s.polyline.clone(),
            buffer_width,
        })
        .collect();
    for (idx, seg) in buffered.iter().enumerate() {
        let pieces: Vec<(Xy, Xy)> = if seg.polyline.len() == 1 {
            vec![(seg.polyline[0], seg.polyline[0])]
        } else {
            seg.polyline.windows(2).map(|w| (w[0], w[1])).collect()
        };
        for (a, b) in pieces {
            let lo = [a[0].min(b[0]) - buffer_width, a[1].min(b[1]) - buffer_width];
            let hi = [a[0].max(b[0]) + buffer_width, a[1].max(b[1]) + buffer_width];
            entries.push(GeomWithData::new(Rectangle::from_corners(lo, hi), idx));
        }
    }
    Ok(SpatialIndex {
        segments: buffered,
        tree: RTree::bulk_load(entries),
    })
}

impl SpatialIndex {
    pub fn segments(&self) -> &[BufferedSegment] {
        &self.segments
    }

    /// Indices (into [`Self::segments`]) of every segment whose buffer
    /// contains `p`, ascending.
    pub fn query(&self, p: Xy) -> Vec<usize> {
        let mut hits: Vec<usize> = self
            .tree
            .locate_in_envelope_intersecting(&AABB::from_point(p))
            .map(|e| e.data)
            .collect();
        hits.sort_unstable();
        hits.dedup();
        hits.retain(|&i| self.segments[i].contains(p));
        hits
    }

    /// The closest containing segment; ties go to the lower index.
    pub fn query_nearest(&self, p: Xy) -> Option<usize> {
        self.query(p)
            .into_iter()
            .map(|i| (point_segment_distance(p, &self.segments[i].polyline), i))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
            .map(|(_, i)| i)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AssignMode {
    /// Every segment whose buffer contains the item.
    #[default]
    Multi,
    /// Only the closest containing segment.
    Nearest,
}

/// Items attributed to segments.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Assignment {
    /// Segment id to sorted item ids. Only segments with items appear.
    pub by_segment: BTreeMap<String, Vec<String>>,
    /// Item ids that fell in no buffer, sorted.
    pub unassigned: Vec<String>,
}

impl Assignment {
    pub fn pairs(&self) -> impl Iterator<Item = (&str, &str)> {
        self.by_segment
            .iter()
            .flat_map(|(s, items)| items.iter().map(move |i| (s.as_str(), i.as_str())))
    }

    pub fn pair_count(&self) -> usize {
        self.by_segment.values().map(Vec::len).sum()
    }
}

/// Attribute projected items to segments.
pub fn assign_items<'a, I>(items: I, index: &SpatialIndex, mode: AssignMode) -> Assignment
where
    I: IntoIterator<Item = (&'a str, Xy)>,
{
    let mut out = Assignment::default();
    for (id, p) in items {
        let hits = match mode {
            AssignMode::Multi => index.query(p),
            AssignMode::Nearest => index.query_nearest(p).into_iter().collect(),
        };
        if hits.is_empty() {
            out.unassigned.push(id.to_string());
        }
        for i in hits {
            out.by_segment
                .entry(index.segments[i].id.clone())
                .or_default()
                .push(id.to_string());
        }
    }
    for v in out.by_segment.values_mut() {
        v.sort();
        v.dedup();
    }
    out.unassigned.sort();
    out
}

pub fn write_assignment<W: Write>(writer: W, assignment: &Assignment) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["segment_id", "item_id"])?;
    for (s, i) in assignment.pairs() {
        wtr.write_record([s, i])?;
    }
    wtr.flush().map_err(|e| Error::io("<assignment writer>", e))?;
    Ok(())
}

/// Read `segment_id,item_id` rows. Unassigned items are not recorded in
/// this format.
pub fn parse_assignment<R: Read>(reader: R) -> Result<Assignment> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["segment_id", "item_id"] {
        return Err(Error::Parse("assignment header must be segment_id,item_id".into()));
    }
    let mut out = Assignment::default();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != 2 || rec[0].is_empty() || rec[1].is_empty() {
            return Err(Error::Parse(format!("bad assignment row {:?}", rec)));
        }
        out.by_segment
            .entry(rec[0].to_string())
            .or_default()
            .push(rec[1].to_string());
    }
    for v in out.by_segment.values_mut() {
        v.sort();
        v.dedup();
    }
    Ok(out)
}

/// A projected monitoring station.
#[derive(Debug, Clone, PartialEq)]
pub struct StationSite {
    pub id: String,
    pub location: Xy,
}

/// Station closest to the segment's midpoint, if within `max_distance`.
/// Ties go to the lexicographically smaller station id.
pub fn nearest_station<'a>(
    segment: &ProjectedSegment,
    stations: &'a [StationSite],
    max_distance: f64,
) -> Option<&'a StationSite> {
    let mid = segment.midpoint();
    stations
        .iter()
        .map(|s| (dist(mid, s.location), s))
        .filter(|(d, _)| *d <= max_distance)
        .min_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.id.cmp(&b.1.id)))
        .map(|(_, s)| s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn haversine(a: LatLon, b: LatLon) -> f64 {
        let (p1, p2) = (a.lat.to_radians(), b.lat.to_radians());
        let dp = p2 - p1;
        let dl = (b.lon - a.lon).to_radians();
        let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
        2.0 * EARTH_RADIUS_M * h.sqrt().asin()
    }

    #[test]
    fn projection_examples() {
        let origin = LatLon::new(51.5, -0.12);
        let proj = LocalProjection::new(origin).unwrap();
        assert_eq!(proj.project(origin).unwrap(), [0.0, 0.0]);

        let north = LatLon::new(52.5, -0.12);
        let y = proj.project(north).unwrap()[1];
        let oracle = haversine(origin, north);
        assert!((y - oracle).abs() / oracle < 1e-3);
        assert!((y - 111_195.0).abs() / 111_195.0 < 1e-3);

        let proj60 = LocalProjection::new(LatLon::new(60.0, 10.0)).unwrap();
        let east = LatLon::new(60.0, 11.0);
        let x = proj60.project(east).unwrap()[0];
        let oracle = haversine(LatLon::new(60.0, 10.0), east);
        assert!((x - oracle).abs() / oracle < 1e-3);
        assert!((x - 55_597.0).abs() / 55_597.0 < 1e-3);
    }

    #[test]
    fn projection_rejects_far_points() {
        let proj = LocalProjection::new(LatLon::new(51.5, -0.12)).unwrap();
        assert!(proj.project(LatLon::new(53.0, -0.12)).is_err());
        assert!(proj.project(LatLon::new(51.5, 3.0)).is_err());
        assert!(LocalProjection::new(LatLon::new(95.0, 0.0)).is_err());
    }

    #[test]
    fn distance_examples() {
        let line = [[0.0, 0.0], [100.0, 0.0]];
        assert_eq!(point_segment_distance([50.0, 20.0], &line), 20.0);
        assert_eq!(point_segment_distance([150.0, 0.0], &line), 50.0);
        assert_eq!(point_segment_distance([-3.0, -4.0], &line), 5.0);
    }

    #[test]
    fn distance_matches_dense_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let n = rng.gen_range(2..6);
            let poly: Vec<Xy> = (0..n)
                .map(|_| [rng.gen_range(-100.0..100.0), rng.gen_range(-100.0..100.0)])
                .collect();
            let p = [rng.gen_range(-150.0..150.0), rng.gen_range(-150.0..150.0)];
            // Dense sampling along the polyline.
            let samples = 100_000;
            let total = polyline_length(&poly);
            let mut best = f64::INFINITY;
            let mut seg = 0;
            let mut walked = 0.0;
            for k in 0..=samples {
                let target = total * k as f64 / samples as f64;
                while seg + 2 < poly.len() && walked + dist(poly[seg], poly[seg + 1]) < target {
                    walked += dist(poly[seg], poly[seg + 1]);
                    seg += 1;
                }
                let l = dist(poly[seg], poly[seg + 1]);
                let t = if l > 0.0 { ((target - walked) / l).clamp(0.0, 1.0) } else { 0.0 };
                let q = [
                    poly[seg][0] + t * (poly[seg + 1][0] - poly[seg][0]),
                    poly[seg][1] + t * (poly[seg + 1][1] - poly[seg][1]),
                ];
                best = best.min(dist(p, q));
            }
            let exact = point_segment_distance(p, &poly);
            assert!(exact <= best + 1e-9);
            // Sampling step bounds the discretisation error.
            let step = total / samples as f64;
            assert!(best - exact <= step, "exact {exact}, sampled {best}");
            assert!((best - exact) / exact.max(1.0) < 1e-4 + step / exact.max(1.0));
        }
    }

    fn seg(id: &str, pts: &[Xy]) -> ProjectedSegment {
        ProjectedSegment {
            id: id.into(),
            polyline: pts.to_vec(),
        }
    }

    #[test]
    fn index_examples() {
        let segs = vec![seg("a", &[[0.0, 0.0], [100.0, 0.0]])];
        let idx = build_index(&segs, DEFAULT_BUFFER_M).unwrap();
        assert_eq!(idx.query([50.0, 10.0]), vec![0]);
        assert!(idx.query([50.0, 30.0]).is_empty());
        assert!(build_index(&segs, 0.0).is_err());
    }

    #[test]
    fn assignment_examples() {
        let segs = vec![
            seg("a", &[[0.0, 0.0], [100.0, 0.0]]),
            seg("b", &[[0.0, 30.0], [100.0, 30.0]]),
        ];
        let idx = build_index(&segs, 22.5).unwrap();
        let items = [
            ("one", [50.0, -10.0]),
            ("both", [50.0, 15.0]),
            ("none", [500.0, 500.0]),
        ];
        let a = assign_items(items.iter().map(|(i, p)| (*i, *p)), &idx, AssignMode::Multi);
        assert_eq!(a.by_segment["a"], vec!["both", "one"]);
        assert_eq!(a.by_segment["b"], vec!["both"]);
        assert_eq!(a.unassigned, vec!["none"]);

        let a = assign_items(items.iter().map(|(i, p)| (*i, *p)), &idx, AssignMode::Nearest);
        assert_eq!(a.by_segment["a"], vec!["both", "one"]);
        assert!(!a.by_segment.contains_key("b"));
    }

    #[test]
    fn assignment_csv_round_trip() {
        let mut a = Assignment::default();
        a.by_segment.insert("s1".into(), vec!["i1".into(), "i2".into()]);
        a.by_segment.insert("s,2".into(), vec!["i3".into()]);
        let mut buf = Vec::new();
        write_assignment(&mut buf, &a).unwrap();
        assert_eq!(parse_assignment(buf.as_slice()).unwrap(), a);
    }

    #[test]
    fn nearest_station_examples() {
        let s = seg("a", &[[0.0, 0.0], [20.0, 0.0]]);
        let near = vec![StationSite { id: "x".into(), location: [10.0, 10.0] }];
        assert_eq!(nearest_station(&s, &near, 500.0).unwrap().id, "x");
        let far = vec![StationSite { id: "y".into(), location: [10.0, 900.0] }];
        assert!(nearest_station(&s, &far, 500.0).is_none());
    }

    #[test]
    fn nearest_station_matches_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let stations: Vec<StationSite> = (0..rng.gen_range(1..20))
                .map(|k| StationSite {
                    id: format!("st{k:02}"),
                    location: [rng.gen_range(0.0..2000.0), rng.gen_range(0.0..2000.0)],
                })
                .collect();
            let a = [rng.gen_range(0.0..2000.0), rng.gen_range(0.0..2000.0)];
            let b = [a[0] + rng.gen_range(-100.0..100.0), a[1] + 50.0];
            let s = seg("s", &[a, b]);
            let mid = [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0];
            let mut best: Option<(f64, &str)> = None;
            for st in &stations {
                let d = dist(mid, st.location);
                if d <= 600.0 && best.map_or(true, |(bd, _)| d < bd) {
                    best = Some((d, &st.id));
                }
            }
            let got = nearest_station(&s, &stations, 600.0).map(|s| s.id.as_str());
            assert_eq!(got, best.map(|b| b.1));
        }
    }

    #[test]
    fn midpoint_walks_the_polyline() {
        let m = polyline_midpoint(&[[0.0, 0.0], [10.0, 0.0], [10.0, 30.0]]);
        assert!((m[0] - 10.0).abs() < 1e-12 && (m[1] - 10.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn projection_round_trip(lat in 40.0f64..60.0, lon in -10.0f64..10.0,
                                 dlat in -0.3f64..0.3, dlon in -0.3f64..0.3) {
            let proj = LocalProjection::new(LatLon::new(lat, lon)).unwrap();
            let p = LatLon::new(lat + dlat, lon + dlon);
            let back = proj.unproject(proj.project(p).unwrap());
            prop_assert!((back.lat - p.lat).abs() < 1e-9);
            prop_assert!((back.lon - p.lon).abs() < 1e-9);
            // Under 1 mm at city scale.
            let err = haversine(p, back);
            prop_assert!(err < 1e-3);
        }

        #[test]
        fn bbox_serde(b in (-170.0f64..170.0, -80.0f64..80.0, 0.0f64..5.0, 0.0f64..5.0)) {
            let bb = BBox::new(b.0, b.1, b.0 + b.2, b.1 + b.3);
            let s = serde_json::to_string(&bb).unwrap();
            prop_assert_eq!(serde_json::from_str::<BBox>(&s).unwrap(), bb);
        }
    }
}
