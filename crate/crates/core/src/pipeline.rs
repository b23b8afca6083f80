//! Configuration and stage runners for the end-to-end pipeline.
//!
//! Every stage reads its inputs from disk and writes its outputs to the
//! output directory, so stages can be re-run one at a time. Output file
//! names are fixed; see [`outputs`].

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::cograph::{build_cooccurrence, graph_stats, parse_graph, write_edges, write_nodes};
use crate::community::{
    assign_categories, hierarchical_classify, merge_subcommunities, parse_label_map, parse_merge_spec,
    read_hierarchy, CategoryHierarchy, ClassifyConfig, DEFAULT_SIZE_THRESHOLD,
};
use crate::error::{Error, Result};
use crate::geo::{
    assign_items, build_index, nearest_station, parse_assignment, project_segments, write_assignment,
    AssignMode, Assignment, BBox, LatLon, LocalProjection, ProjectedSegment, StationSite, Xy,
    DEFAULT_BUFFER_M,
};
use crate::heatmap::{emit_heatmap, layer_file_stem};
use crate::ingest::{read_air_quality, read_items, read_segments, AirQuality, ItemFilter, Pollutant, Source, StreetSegment};
use crate::lexicon::{hex_string, load_lexicon, match_items, parse_matches, read_blocklist, write_matches, ItemMatch};
use crate::profile::{
    base_notes_text, city_distribution, match_tag_counts, parse_smell_vectors, report_base_notes,
    segment_tags, smell_vectors, write_base_notes_csv, write_smell_vectors, zscore_field, ProfileOptions,
    SmellVectors, Taxonomy, DEFAULT_MIN_TAGS,
};
use crate::spatialstats::{
    buffer_sweep, category_cross_correlation, category_pollutant_report, write_correlation_report,
    write_cross_correlation, write_sweep, ClassSpec, Field, SweepInputs,
};

/// Names of the files each stage writes, relative to the output directory.
pub mod outputs {
    pub const MATCHES: &str = "matches.ndjson";
    pub const INGEST_REPORT: &str = "ingest_report.json";
    pub const GRAPH_NODES: &str = "graph_nodes.csv";
    pub const GRAPH_EDGES: &str = "graph_edges.csv";
    pub const HIERARCHY: &str = "hierarchy.json";
    pub const ASSIGNMENTS: &str = "assignments.csv";
    pub const SMELL_VECTORS: &str = "smell_vectors.csv";
    pub const BASE_NOTES_CSV: &str = "base_notes.csv";
    pub const BASE_NOTES_TXT: &str = "base_notes.txt";
    pub const CORRELATIONS: &str = "correlations.csv";
    pub const CROSS_CORRELATION: &str = "cross_correlation.csv";
    pub const SWEEP: &str = "sweep.csv";
    pub const HEATMAP_DIR: &str = "heatmaps";
    pub const MANIFEST: &str = "manifest.json";
}

pub const OUTPUT_DIR_ENV: &str = "SMELLSCAPE_OUTPUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ItemInput {
    Path(PathBuf),
    /// Records without a `source` field take this one.
    WithSource { path: PathBuf, source: Source },
}

impl ItemInput {
    pub fn path(&self) -> &Path {
        match self {
            ItemInput::Path(p) | ItemInput::WithSource { path: p, .. } => p,
        }
    }

    fn path_mut(&mut self) -> &mut PathBuf {
        match self {
            ItemInput::Path(p) | ItemInput::WithSource { path: p, .. } => p,
        }
    }

    fn source(&self) -> Option<Source> {
        match self {
            ItemInput::Path(_) => None,
            ItemInput::WithSource { source, .. } => Some(*source),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Inputs {
    pub items: Vec<ItemInput>,
    pub segments: PathBuf,
    pub air_quality: PathBuf,
    pub lexicon: PathBuf,
    #[serde(default)]
    pub blocklist: Option<PathBuf>,
    #[serde(default)]
    pub merge_spec: Option<PathBuf>,
    #[serde(default)]
    pub labels: Option<PathBuf>,
}

/// Where per-segment pollutant values come from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PollutionSource {
    /// Per-segment concentration rows.
    #[default]
    Segment,
    /// AQI of the nearest station to the segment midpoint.
    Station,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub bbox: Option<BBox>,
    pub buffer_width: f64,
    pub assign_mode: AssignMode,
    pub min_tags: usize,
    pub include_uncategorized: bool,
    pub size_threshold: usize,
    pub min_edge_weight: u64,
    /// Sources whose items feed the co-occurrence graph.
    pub cooccurrence_sources: Vec<Source>,
    pub distance_classes: ClassSpec,
    pub pollution_source: PollutionSource,
    pub station_max_distance: f64,
    pub drop_retweets_and_replies: bool,
    /// Also correlate per social-media source.
    pub per_source: bool,
    pub sweep_sizes: Vec<f64>,
    /// (category, pollutant) pairs for the sweep; empty means all.
    pub sweep_pairs: Vec<(String, String)>,
    pub inputs: Option<Inputs>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("out"),
            bbox: None,
            buffer_width: DEFAULT_BUFFER_M,
            assign_mode: AssignMode::Multi,
            min_tags: DEFAULT_MIN_TAGS,
            include_uncategorized: false,
            size_threshold: DEFAULT_SIZE_THRESHOLD,
            min_edge_weight: 1,
            cooccurrence_sources: vec![Source::Flickr],
            distance_classes: ClassSpec::default(),
            pollution_source: PollutionSource::Segment,
            station_max_distance: 5_000.0,
            drop_retweets_and_replies: true,
            per_source: true,
            sweep_sizes: vec![10.0, 25.0, 50.0, 100.0],
            sweep_pairs: Vec::new(),
            inputs: None,
        }
    }
}

impl PipelineConfig {
    /// Parse TOML, or JSON when `json` is set.
    pub fn parse(text: &str, json: bool) -> Result<Self> {
        if json {
            Ok(serde_json::from_str(text)?)
        } else {
            toml::from_str(text).map_err(|e| Error::Parse(format!("config: {e}")))
        }
    }

    /// Load a config file; relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let mut cfg = Self::parse(&text, json)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        if let Some(inp) = &mut self.inputs {
            for i in &mut inp.items {
                fix(i.path_mut());
            }
            fix(&mut inp.segments);
            fix(&mut inp.air_quality);
            fix(&mut inp.lexicon);
            for p in [&mut inp.blocklist, &mut inp.merge_spec, &mut inp.labels].into_iter().flatten() {
                fix(p);
            }
        }
    }

    /// Parameter checks that do not touch the file system.
    pub fn validate_params(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Validation(m.to_string()));
        if !(self.buffer_width > 0.0 && self.buffer_width.is_finite()) {
            return bad("buffer_width must be positive");
        }
        if self.min_tags < 1 {
            return bad("min_tags must be at least 1");
        }
        if self.size_threshold < 2 {
            return bad("size_threshold must be at least 2");
        }
        if self.min_edge_weight < 1 {
            return bad("min_edge_weight must be at least 1");
        }
        if self.station_max_distance.is_nan() || self.station_max_distance <= 0.0 {
            return bad("station_max_distance must be positive");
        }
        if self.sweep_sizes.windows(2).any(|w| w[0] >= w[1])
            || self.sweep_sizes.iter().any(|s| !(*s > 0.0 && s.is_finite()))
        {
            return bad("sweep_sizes must be positive and strictly increasing");
        }
        if self.cooccurrence_sources.is_empty() {
            return bad("cooccurrence_sources must not be empty");
        }
        if let ClassSpec::Count(0) = self.distance_classes {
            return bad("distance_classes must be at least 1");
        }
        Ok(())
    }

    /// Parameter checks plus existence of every referenced input file.
    pub fn validate(&self) -> Result<()> {
        self.validate_params()?;
        let inp = self.inputs()?;
        if inp.items.is_empty() {
            return Err(Error::Validation("no item inputs configured".into()));
        }
        let mut paths: Vec<(&str, &Path)> = inp.items.iter().map(|i| ("items", i.path())).collect();
        paths.push(("segments", &inp.segments));
        paths.push(("air_quality", &inp.air_quality));
        paths.push(("lexicon", &inp.lexicon));
        for (name, p) in [("blocklist", &inp.blocklist), ("merge_spec", &inp.merge_spec), ("labels", &inp.labels)] {
            if let Some(p) = p {
                paths.push((name, p));
            }
        }
        for (name, p) in paths {
            if !p.is_file() {
                return Err(Error::Validation(format!("{name} file {} not found", p.display())));
            }
        }
        Ok(())
    }

    pub fn inputs(&self) -> Result<&Inputs> {
        self.inputs
            .as_ref()
            .ok_or_else(|| Error::Validation("config has no [inputs] section".into()))
    }

    fn profile_options(&self) -> ProfileOptions {
        ProfileOptions {
            min_tags: self.min_tags,
            include_uncategorized: self.include_uncategorized,
        }
    }
}

/// Counts and notes a stage reports for the manifest.
pub type StageReport = BTreeMap<String, Value>;

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let mut w = create(path)?;
    f(&mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Read items, match them against the lexicon and write the matches.
pub fn stage_match(cfg: &PipelineConfig) -> Result<StageReport> {
    let inp = cfg.inputs()?;
    let blocklist = match &inp.blocklist {
        Some(p) => read_blocklist(p)?,
        None => Default::default(),
    };
    let (lexicon, lex_report) = load_lexicon(&inp.lexicon, &blocklist)?;
    let matcher = lexicon.matchers();
    let mut all = Vec::new();
    let mut per_input = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    let (mut read, mut skipped, mut duplicates) = (0usize, 0usize, 0usize);
    for input in &inp.items {
        let filter = ItemFilter {
            source: input.source(),
            drop_retweets_and_replies: cfg.drop_retweets_and_replies,
            bbox: cfg.bbox,
        };
        let batch = read_items(input.path(), &filter)?;
        read += batch.report.records;
        skipped += batch.report.skipped.len();
        per_input.push(json!({
            "records": batch.report.records,
            "parsed": batch.report.parsed,
            "skipped": batch.report.skip_counts(),
        }));
        for item in batch.items {
            if seen.insert(item.id.clone()) {
                all.push(item);
            } else {
                duplicates += 1;
            }
        }
    }
    let matches = match_items(&all, &matcher);
    let out = &cfg.output_dir;
    write_file(&out.join(outputs::MATCHES), |w| write_matches(w, &matches))?;
    write_file(&out.join(outputs::INGEST_REPORT), |w| {
        serde_json::to_writer_pretty(&mut *w, &per_input)?;
        w.write_all(b"\n").map_err(|e| Error::io(outputs::INGEST_REPORT, e))
    })?;
    let mut r = StageReport::new();
    r.insert("lexicon_version".into(), json!(lexicon.version()));
    r.insert("lexicon_terms".into(), json!(lexicon.len()));
    r.insert("lexicon_blocklisted".into(), json!(lex_report.blocklisted));
    r.insert("items_read".into(), json!(read));
    r.insert("items_skipped".into(), json!(skipped + duplicates));
    r.insert("items_parsed".into(), json!(all.len()));
    r.insert("items_matched".into(), json!(matches.len()));
    r.insert("tags_matched".into(), json!(matches.iter().map(|m| m.terms.len()).sum::<usize>()));
    Ok(r)
}

fn load_matches(cfg: &PipelineConfig) -> Result<Vec<ItemMatch>> {
    parse_matches(open(&cfg.output_dir.join(outputs::MATCHES))?)
}

/// Build the co-occurrence graph of matched terms.
pub fn stage_graph(cfg: &PipelineConfig) -> Result<StageReport> {
    let matches = load_matches(cfg)?;
    let graph = build_cooccurrence(
        matches
            .iter()
            .filter(|m| cfg.cooccurrence_sources.contains(&m.source))
            .map(|m| &m.terms),
        cfg.min_edge_weight,
    );
    let out = &cfg.output_dir;
    write_file(&out.join(outputs::GRAPH_NODES), |w| write_nodes(w, &graph))?;
    write_file(&out.join(outputs::GRAPH_EDGES), |w| write_edges(w, &graph))?;
    let stats = graph_stats(&graph);
    let mut r = StageReport::new();
    r.insert("nodes".into(), json!(stats.nodes));
    r.insert("edges".into(), json!(stats.edges));
    r.insert("total_weight".into(), json!(stats.total_weight));
    Ok(r)
}

/// Derive, merge and label the taxonomy.
pub fn stage_classify(cfg: &PipelineConfig) -> Result<StageReport> {
    let out = &cfg.output_dir;
    let graph = parse_graph(open(&out.join(outputs::GRAPH_NODES))?, open(&out.join(outputs::GRAPH_EDGES))?)?;
    if graph.node_count() == 0 {
        return Err(Error::Validation("no matched words to classify".into()));
    }
    let ccfg = ClassifyConfig {
        size_threshold: cfg.size_threshold,
        seed: cfg.seed,
        ..Default::default()
    };
    let mut h = hierarchical_classify(&graph, &ccfg)?;
    let inp = cfg.inputs.as_ref();
    if let Some(p) = inp.and_then(|i| i.merge_spec.as_ref()) {
        h = merge_subcommunities(&h, &parse_merge_spec(&read_text(p)?)?)?;
    }
    let labels = match inp.and_then(|i| i.labels.as_ref()) {
        Some(p) => parse_label_map(&read_text(p)?)?,
        None => BTreeMap::new(),
    };
    let h = assign_categories(&h, &labels)?;
    write_file(&out.join(outputs::HIERARCHY), |w| {
        w.write_all(h.to_json().as_bytes())
            .and_then(|_| w.write_all(b"\n"))
            .map_err(|e| Error::io(outputs::HIERARCHY, e))
    })?;
    let mut r = StageReport::new();
    r.insert("categories".into(), json!(h.category_labels()));
    r.insert("top_level".into(), json!(h.categories().len()));
    r.insert(
        "unclustered".into(),
        json!(h.categories().iter().filter(|c| c.unclustered).count()),
    );
    r.insert("depth".into(), json!(h.depth()));
    Ok(r)
}

/// Segments projected around the configured bounding box, or around the
/// segments' own extent.
pub struct ProjectedCity {
    pub segments: Vec<StreetSegment>,
    pub projected: Vec<ProjectedSegment>,
    pub projection: LocalProjection,
    pub segments_skipped: usize,
}

pub fn load_city(cfg: &PipelineConfig) -> Result<ProjectedCity> {
    let inp = cfg.inputs()?;
    let batch = read_segments(&inp.segments)?;
    let origin = match cfg.bbox {
        Some(b) => b.centroid(),
        None => BBox::enclosing(batch.segments.iter().flat_map(|s| s.polyline.iter().copied()))
            .map(|b| b.centroid())
            .unwrap_or(LatLon::new(0.0, 0.0)),
    };
    let projection = LocalProjection::new(origin)?;
    let mut segments = Vec::new();
    let mut projected = Vec::new();
    let mut skipped = batch.report.skipped.len();
    for s in batch.segments {
        match project_segments(std::slice::from_ref(&s), &projection) {
            Ok(mut p) => {
                projected.push(p.remove(0));
                segments.push(s);
            }
            Err(e) => {
                log::warn!("segment {} skipped: {e}", s.id);
                skipped += 1;
            }
        }
    }
    if segments.is_empty() {
        return Err(Error::Validation("no usable street segments".into()));
    }
    Ok(ProjectedCity {
        segments,
        projected,
        projection,
        segments_skipped: skipped,
    })
}

fn project_matches(matches: &[ItemMatch], proj: &LocalProjection) -> (Vec<(ItemMatch, Xy)>, usize) {
    let mut out = Vec::with_capacity(matches.len());
    let mut failed = 0;
    for m in matches {
        match proj.project(m.location()) {
            Ok(p) => out.push((m.clone(), p)),
            Err(_) => failed += 1,
        }
    }
    (out, failed)
}

/// Attribute matched items to street buffers.
pub fn stage_assign(cfg: &PipelineConfig) -> Result<StageReport> {
    let matches = load_matches(cfg)?;
    let city = load_city(cfg)?;
    let (items, outside) = project_matches(&matches, &city.projection);
    let index = build_index(&city.projected, cfg.buffer_width)?;
    let assignment = assign_items(items.iter().map(|(m, p)| (m.id.as_str(), *p)), &index, cfg.assign_mode);
    write_file(&cfg.output_dir.join(outputs::ASSIGNMENTS), |w| write_assignment(w, &assignment))?;
    let mut r = StageReport::new();
    r.insert("segments".into(), json!(city.segments.len()));
    r.insert("segments_skipped".into(), json!(city.segments_skipped));
    r.insert("items_outside_projection".into(), json!(outside));
    r.insert("items_unassigned".into(), json!(assignment.unassigned.len()));
    r.insert("pairs".into(), json!(assignment.pair_count()));
    r.insert("segments_with_items".into(), json!(assignment.by_segment.len()));
    Ok(r)
}

fn load_taxonomy(cfg: &PipelineConfig) -> Result<(CategoryHierarchy, Taxonomy)> {
    let h = read_hierarchy(open(&cfg.output_dir.join(outputs::HIERARCHY))?)?;
    let t = Taxonomy::from_hierarchy(&h);
    Ok((h, t))
}

fn load_assignment(cfg: &PipelineConfig) -> Result<Assignment> {
    parse_assignment(open(&cfg.output_dir.join(outputs::ASSIGNMENTS))?)
}

/// Smell vectors per segment and the city's base notes.
pub fn stage_profile(cfg: &PipelineConfig) -> Result<StageReport> {
    let matches = load_matches(cfg)?;
    let assignment = load_assignment(cfg)?;
    let (_, taxonomy) = load_taxonomy(cfg)?;
    let tags = segment_tags(&assignment, &matches);
    let vectors = smell_vectors(&tags, &taxonomy, &cfg.profile_options());
    let out = &cfg.output_dir;
    write_file(&out.join(outputs::SMELL_VECTORS), |w| write_smell_vectors(w, &vectors))?;
    let counts = match_tag_counts(&matches);
    let dist = city_distribution(counts.iter().map(|(w, c)| (w.as_str(), *c)), &taxonomy)?;
    let ranked = report_base_notes(&dist);
    write_file(&out.join(outputs::BASE_NOTES_CSV), |w| write_base_notes_csv(w, &ranked))?;
    write_file(&out.join(outputs::BASE_NOTES_TXT), |w| {
        w.write_all(base_notes_text(&ranked).as_bytes())
            .map_err(|e| Error::io(outputs::BASE_NOTES_TXT, e))
    })?;
    let mut r = StageReport::new();
    r.insert("segments_with_tags".into(), json!(tags.len()));
    r.insert("segments_retained".into(), json!(vectors.len()));
    r.insert("min_tags".into(), json!(cfg.min_tags));
    r.insert("top_base_note".into(), json!(ranked.first().map(|(c, _)| c.clone())));
    Ok(r)
}

/// Per-segment pollutant fields, keyed by pollutant name.
pub fn pollutant_fields(
    cfg: &PipelineConfig,
    aq: &AirQuality,
    city: &ProjectedCity,
) -> Result<Vec<(String, Field)>> {
    let mut out = Vec::new();
    match cfg.pollution_source {
        PollutionSource::Segment => {
            for p in Pollutant::ALL {
                let field = aq.segment_field(p);
                if !field.is_empty() {
                    out.push((p.to_string(), field));
                }
            }
        }
        PollutionSource::Station => {
            for p in Pollutant::ALL {
                let mut sites = Vec::new();
                let mut aqi = BTreeMap::new();
                for s in aq.stations.iter().filter(|s| s.pollutant == p) {
                    if let Ok(xy) = city.projection.project(s.location) {
                        sites.push(StationSite {
                            id: s.station_id.clone(),
                            location: xy,
                        });
                        aqi.insert(s.station_id.clone(), s.aqi as f64);
                    }
                }
                if sites.is_empty() {
                    continue;
                }
                let field: Field = city
                    .projected
                    .iter()
                    .filter_map(|seg| {
                        nearest_station(seg, &sites, cfg.station_max_distance)
                            .map(|st| (seg.id.clone(), aqi[&st.id]))
                    })
                    .collect();
                out.push((p.to_string(), field));
            }
        }
    }
    Ok(out)
}

fn midpoints(city: &ProjectedCity) -> BTreeMap<String, Xy> {
    city.projected.iter().map(|s| (s.id.clone(), s.midpoint())).collect()
}

fn vectors_for_source(
    matches: &[ItemMatch],
    assignment: &Assignment,
    taxonomy: &Taxonomy,
    opts: &ProfileOptions,
    source: Source,
) -> SmellVectors {
    let subset: Vec<ItemMatch> = matches.iter().filter(|m| m.source == source).cloned().collect();
    smell_vectors(&segment_tags(assignment, &subset), taxonomy, opts)
}

/// Category-pollutant correlations and the category cross-correlation.
pub fn stage_correlate(cfg: &PipelineConfig) -> Result<StageReport> {
    let out = &cfg.output_dir;
    let vectors = parse_smell_vectors(open(&out.join(outputs::SMELL_VECTORS))?)?;
    let city = load_city(cfg)?;
    let aq = read_air_quality(&cfg.inputs()?.air_quality)?;
    let fields = pollutant_fields(cfg, &aq, &city)?;
    let locations = midpoints(&city);
    let mut rows = category_pollutant_report(&vectors, &fields, &locations, &cfg.distance_classes, "all");
    if cfg.per_source {
        let matches = load_matches(cfg)?;
        let assignment = load_assignment(cfg)?;
        let (_, taxonomy) = load_taxonomy(cfg)?;
        for source in Source::ALL {
            if !matches.iter().any(|m| m.source == source) {
                continue;
            }
            let sv = vectors_for_source(&matches, &assignment, &taxonomy, &cfg.profile_options(), source);
            rows.extend(category_pollutant_report(
                &sv,
                &fields,
                &locations,
                &cfg.distance_classes,
                source.as_str(),
            ));
        }
    }
    write_file(&out.join(outputs::CORRELATIONS), |w| write_correlation_report(w, &rows))?;
    let mut r = StageReport::new();
    r.insert("pollutants".into(), json!(fields.iter().map(|(p, _)| p.clone()).collect::<Vec<_>>()));
    r.insert("rows".into(), json!(rows.len()));
    r.insert("rows_tested".into(), json!(rows.iter().filter(|x| x.result.is_some()).count()));
    match category_cross_correlation(&vectors) {
        Ok(cc) => {
            write_file(&out.join(outputs::CROSS_CORRELATION), |w| write_cross_correlation(w, &cc))?;
            r.insert("cross_correlation".into(), json!(true));
        }
        Err(e) if e.is_validation() => {
            log::warn!("cross-correlation skipped: {e}");
            let _ = std::fs::remove_file(out.join(outputs::CROSS_CORRELATION));
            r.insert("cross_correlation".into(), json!(false));
        }
        Err(e) => return Err(e),
    }
    Ok(r)
}

/// Buffer-size sensitivity sweep.
pub fn stage_sweep(cfg: &PipelineConfig) -> Result<StageReport> {
    let matches = load_matches(cfg)?;
    let city = load_city(cfg)?;
    let (_, taxonomy) = load_taxonomy(cfg)?;
    let aq = read_air_quality(&cfg.inputs()?.air_quality)?;
    let fields = pollutant_fields(cfg, &aq, &city)?;
    let (items, _) = project_matches(&matches, &city.projection);
    let inputs = SweepInputs {
        segments: &city.projected,
        items: &items,
        taxonomy: &taxonomy,
        profile: cfg.profile_options(),
        pollutants: &fields,
        classes: cfg.distance_classes.clone(),
        mode: cfg.assign_mode,
    };
    let rows = buffer_sweep(&inputs, &cfg.sweep_sizes, &cfg.sweep_pairs)?;
    write_file(&cfg.output_dir.join(outputs::SWEEP), |w| write_sweep(w, &rows))?;
    let mut r = StageReport::new();
    r.insert("sizes".into(), json!(cfg.sweep_sizes));
    r.insert("rows".into(), json!(rows.len()));
    r.insert("rows_flagged".into(), json!(rows.iter().filter(|x| x.flag.is_some()).count()));
    Ok(r)
}

/// Z-scored GeoJSON layers for every category and pollutant.
pub fn stage_heatmap(cfg: &PipelineConfig) -> Result<StageReport> {
    let out = &cfg.output_dir;
    let vectors = parse_smell_vectors(open(&out.join(outputs::SMELL_VECTORS))?)?;
    let city = load_city(cfg)?;
    let aq = read_air_quality(&cfg.inputs()?.air_quality)?;
    let mut layers: Vec<(String, Field)> = (0..vectors.categories.len())
        .map(|k| (vectors.categories[k].clone(), vectors.column(k)))
        .collect();
    layers.extend(pollutant_fields(cfg, &aq, &city)?);
    let dir = out.join(outputs::HEATMAP_DIR);
    if dir.exists() {
        std::fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let mut written = Vec::new();
    let mut omitted = Vec::new();
    let mut missing = 0;
    for (layer, field) in &layers {
        let z = match zscore_field(field) {
            Ok(z) => z,
            Err(e) => {
                log::warn!("heatmap {layer} omitted: {e}");
                omitted.push(layer.clone());
                continue;
            }
        };
        let h = emit_heatmap(layer, &z, &city.segments);
        missing += h.missing.len();
        let name = format!("{}.geojson", layer_file_stem(layer));
        write_file(&dir.join(&name), |w| {
            serde_json::to_writer(&mut *w, &h.collection)?;
            w.write_all(b"\n").map_err(|e| Error::io(&name, e))
        })?;
        written.push(name);
    }
    let mut r = StageReport::new();
    r.insert("layers".into(), json!(written));
    r.insert("omitted".into(), json!(omitted));
    r.insert("segments_without_geometry".into(), json!(missing));
    Ok(r)
}

pub const STAGES: [&str; 8] = [
    "match", "graph", "classify", "assign", "profile", "correlate", "sweep", "heatmap",
];

pub fn run_stage(cfg: &PipelineConfig, stage: &str) -> Result<StageReport> {
    let result = match stage {
        "match" => stage_match(cfg),
        "graph" => stage_graph(cfg),
        "classify" => stage_classify(cfg),
        "assign" => stage_assign(cfg),
        "profile" => stage_profile(cfg),
        "correlate" => stage_correlate(cfg),
        "sweep" => stage_sweep(cfg),
        "heatmap" => stage_heatmap(cfg),
        other => return Err(Error::invalid(format!("unknown stage {other:?}"))),
    };
    result.map_err(|e| e.in_stage(stage))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub seed: u64,
    pub stages: BTreeMap<String, StageReport>,
    /// Output path relative to the output directory, to SHA-256 digest.
    pub outputs: BTreeMap<String, String>,
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex_string(&Sha256::digest(&bytes)))
}

fn collect_outputs(dir: &Path, base: &Path, out: &mut BTreeMap<String, String>) -> Result<()> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect_outputs(&p, base, out)?;
        } else if p.file_name().is_some_and(|n| n != outputs::MANIFEST) {
            let rel = p.strip_prefix(base).expect("under base");
            let key = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
            out.insert(key, sha256_file(&p)?);
        }
    }
    Ok(())
}

/// Run every stage in order and write `manifest.json`.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<Manifest> {
    cfg.validate().map_err(|e| e.in_stage("validate"))?;
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
    let mut stages = BTreeMap::new();
    for stage in STAGES {
        log::info!("stage {stage}");
        stages.insert(stage.to_string(), run_stage(cfg, stage)?);
    }
    let mut outputs_map = BTreeMap::new();
    collect_outputs(&cfg.output_dir, &cfg.output_dir, &mut outputs_map)?;
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        stages,
        outputs: outputs_map,
    };
    write_file(&cfg.output_dir.join(outputs::MANIFEST), |w| {
        serde_json::to_writer_pretty(&mut *w, &manifest)?;
        w.write_all(b"\n").map_err(|e| Error::io(outputs::MANIFEST, e))
    })?;
    Ok(manifest)
}
