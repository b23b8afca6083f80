//! Correlation between spatial fields with a significance test corrected
//! for spatial autocorrelation.
//!
//! The variance of Pearson's r under independence is estimated from the
//! correlograms of both fields:
//!
//! `var(r) = (n + Σ_k N_k ρx(k) ρy(k)) / n²`
//!
//! where `N_k` counts ordered pairs in distance class `k` and the leading
//! `n` is the zero-distance class (each point with itself). The effective
//! sample size is `1 + 1/var(r)`, and `t = r √((n_eff − 2) / (1 − r²))` is
//! compared against Student's t with `n_eff − 2` degrees of freedom.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};
use crate::geo::{assign_items, build_index, AssignMode, ProjectedSegment, Xy};
use crate::lexicon::ItemMatch;
use crate::profile::{segment_tags, smell_vectors, ProfileOptions, SmellVectors, Taxonomy};

pub const DEFAULT_DISTANCE_CLASSES: usize = 20;
/// Fewest segments for which a correlation is reported.
pub const MIN_SEGMENTS: usize = 10;

/// Product-moment correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::invalid(format!("lengths differ: {} vs {}", x.len(), y.len())));
    }
    if x.len() < 3 {
        return Err(Error::invalid("correlation needs at least three values"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if !(sxx > 0.0 && syy > 0.0) || !(sxx.is_finite() && syy.is_finite()) {
        return Err(Error::Numerical("correlation of a constant field".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// How distance classes are chosen: a number of equal-width bins over
/// `[0, max pairwise distance]`, or explicit upper bounds in metres.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClassSpec {
    Count(usize),
    Bounds(Vec<f64>),
}

impl Default for ClassSpec {
    fn default() -> Self {
        ClassSpec::Count(DEFAULT_DISTANCE_CLASSES)
    }
}

/// Upper bounds of distance classes. Class `k` holds distances in
/// `(b[k-1], b[k]]`; the first class starts at 0 inclusive.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceClasses {
    bounds: Vec<f64>,
}

impl DistanceClasses {
    pub fn new(bounds: Vec<f64>) -> Result<Self> {
        if bounds.is_empty() || bounds.len() >= u16::MAX as usize {
            return Err(Error::invalid("distance classes need 1 to 65534 bounds"));
        }
        if bounds.iter().any(|b| !b.is_finite()) || bounds[0] < 0.0 {
            return Err(Error::invalid("distance class bounds must be finite and non-negative"));
        }
        if bounds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("distance class bounds must be strictly increasing"));
        }
        Ok(Self { bounds })
    }

    pub fn equal_width(max_distance: f64, count: usize) -> Result<Self> {
        if !(max_distance > 0.0 && max_distance.is_finite()) {
            return Err(Error::invalid("maximum distance must be positive"));
        }
        if count == 0 {
            return Err(Error::invalid("at least one distance class is needed"));
        }
        let mut bounds: Vec<f64> = (1..=count).map(|k| max_distance * k as f64 / count as f64).collect();
        bounds[count - 1] = max_distance;
        Self::new(bounds)
    }

    pub fn from_spec(spec: &ClassSpec, points: &[Xy]) -> Result<Self> {
        match spec {
            ClassSpec::Count(k) => Self::equal_width(max_pairwise_distance(points), *k),
            ClassSpec::Bounds(b) => Self::new(b.clone()),
        }
    }

    pub fn bounds(&self) -> &[f64] {
        &self.bounds
    }

    pub fn len(&self) -> usize {
        self.bounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bounds.is_empty()
    }

    pub fn class_of(&self, d: f64) -> Option<usize> {
        let k = self.bounds.partition_point(|&b| b < d);
        (k < self.bounds.len()).then_some(k)
    }
}

fn dist(a: Xy, b: Xy) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

pub fn max_pairwise_distance(points: &[Xy]) -> f64 {
    let mut m: f64 = 0.0;
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            m = m.max(dist(points[i], points[j]));
        }
    }
    m
}

fn standardize(values: &[f64]) -> Result<Vec<f64>> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if !(var > 0.0 && var.is_finite()) {
        return Err(Error::Numerical("autocorrelation of a constant field".into()));
    }
    let sd = var.sqrt();
    Ok(values.iter().map(|v| (v - mean) / sd).collect())
}

/// Distance class of every unordered pair of a fixed point set, computed
/// once and reused across fields.
#[derive(Debug, Clone)]
pub struct PairClasses {
    n: usize,
    classes: DistanceClasses,
    /// Row-major upper triangle, `i < j`.
    pair_class: Vec<u16>,
    counts: Vec<u64>,
}

impl PairClasses {
    pub fn new(points: &[Xy], classes: DistanceClasses) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::invalid("at least two locations are needed"));
        }
        if points.iter().any(|p| !(p[0].is_finite() && p[1].is_finite())) {
            return Err(Error::invalid("non-finite location"));
        }
        let n = points.len();
        let mut pair_class = Vec::with_capacity(n * (n - 1) / 2);
        let mut counts = vec![0u64; classes.len()];
        for i in 0..n {
            for j in (i + 1)..n {
                let d = dist(points[i], points[j]);
                let k = classes.class_of(d).ok_or_else(|| {
                    Error::invalid(format!(
                        "pair distance {d:.1} m beyond the last distance class"
                    ))
                })?;
                pair_class.push(k as u16);
                counts[k] += 1;
            }
        }
        Ok(Self {
            n,
            classes,
            pair_class,
            counts,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn classes(&self) -> &DistanceClasses {
        &self.classes
    }

    pub fn correlogram(&self, values: &[f64]) -> Result<Correlogram> {
        if values.len() != self.n {
            return Err(Error::invalid(format!(
                "{} values for {} locations",
                values.len(),
                self.n
            )));
        }
        let z = standardize(values)?;
        let mut sums = vec![0.0; self.classes.len()];
        let mut idx = 0;
        for i in 0..self.n {
            let zi = z[i];
            for zj in &z[i + 1..] {
                sums[self.pair_class[idx] as usize] += zi * zj;
                idx += 1;
            }
        }
        let rho = sums
            .iter()
            .zip(&self.counts)
            .map(|(s, &c)| if c > 0 { (s / c as f64).clamp(-1.0, 1.0) } else { 0.0 })
            .collect();
        Ok(Correlogram {
            bounds: self.classes.bounds.clone(),
            rho,
            pairs: self.counts.clone(),
        })
    }

    pub fn corrected_correlation(&self, x: &[f64], y: &[f64]) -> Result<CorrelationResult> {
        let n = self.n;
        if n < MIN_SEGMENTS {
            return Err(Error::invalid(format!(
                "corrected correlation needs at least {MIN_SEGMENTS} locations, got {n}"
            )));
        }
        let r = pearson(x, y)?;
        let cx = self.correlogram(x)?;
        let cy = self.correlogram(y)?;
        let nf = n as f64;
        let mut acc = nf;
        for k in 0..cx.rho.len() {
            acc += 2.0 * cx.pairs[k] as f64 * cx.rho[k] * cy.rho[k];
        }
        let var = acc / (nf * nf);
        let (n_eff, fallback) = if var > 0.0 && var.is_finite() {
            ((1.0 + 1.0 / var).clamp(3.0, nf), false)
        } else {
            log::warn!("non-positive variance estimate for r; using the raw sample size");
            (nf, true)
        };
        let (t, p) = t_test(r, n_eff);
        Ok(CorrelationResult {
            r,
            n,
            n_eff,
            t,
            p,
            fallback,
        })
    }
}

/// Two-sided test of `r` with `n_eff - 2` degrees of freedom.
fn t_test(r: f64, n_eff: f64) -> (f64, f64) {
    let df = n_eff - 2.0;
    let denom = 1.0 - r * r;
    if denom <= 0.0 {
        return (r.signum() * f64::INFINITY, 0.0);
    }
    let t = r * (df / denom).sqrt();
    let p = beta_reg(df / 2.0, 0.5, df / (df + t * t)).clamp(0.0, 1.0);
    (t, p)
}

/// Autocorrelation of one field per distance class.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Correlogram {
    pub bounds: Vec<f64>,
    /// Mean product of standardized values over the class's pairs,
    /// clamped to [-1, 1]; 0 for empty classes.
    pub rho: Vec<f64>,
    /// Unordered pairs per class.
    pub pairs: Vec<u64>,
}

impl Correlogram {
    pub fn empty_classes(&self) -> Vec<usize> {
        (0..self.pairs.len()).filter(|&k| self.pairs[k] == 0).collect()
    }
}

pub fn spatial_autocorr(values: &[f64], points: &[Xy], classes: &DistanceClasses) -> Result<Correlogram> {
    PairClasses::new(points, classes.clone())?.correlogram(values)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CorrelationResult {
    pub r: f64,
    pub n: usize,
    pub n_eff: f64,
    pub t: f64,
    /// Two-sided.
    pub p: f64,
    /// The variance estimate was not positive and `n_eff = n` was used.
    pub fallback: bool,
}

pub fn corrected_correlation(
    x: &[f64],
    y: &[f64],
    points: &[Xy],
    classes: &DistanceClasses,
) -> Result<CorrelationResult> {
    if x.len() != points.len() || y.len() != points.len() {
        return Err(Error::invalid("fields and locations differ in length"));
    }
    PairClasses::new(points, classes.clone())?.corrected_correlation(x, y)
}

/// One line of the category-pollutant report.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationRow {
    pub category: String,
    pub pollutant: String,
    pub source: String,
    pub n: usize,
    /// `None` when the pair could not be tested.
    pub result: Option<CorrelationResult>,
}

/// A pollutant field keyed by segment id.
pub type Field = BTreeMap<String, f64>;

/// Corrected correlation of every category with every pollutant, over the
/// segments that have a smell vector, a pollutant value and a location.
pub fn category_pollutant_report(
    vectors: &SmellVectors,
    pollutants: &[(String, Field)],
    locations: &BTreeMap<String, Xy>,
    spec: &ClassSpec,
    source: &str,
) -> Vec<CorrelationRow> {
    let mut rows = Vec::new();
    for (pollutant, field) in pollutants {
        let common: Vec<(usize, f64, Xy)> = vectors
            .vectors
            .iter()
            .enumerate()
            .filter_map(|(i, v)| Some((i, *field.get(&v.segment_id)?, *locations.get(&v.segment_id)?)))
            .collect();
        let n = common.len();
        let points: Vec<Xy> = common.iter().map(|c| c.2).collect();
        let y: Vec<f64> = common.iter().map(|c| c.1).collect();
        let pairs = if n >= MIN_SEGMENTS {
            DistanceClasses::from_spec(spec, &points)
                .and_then(|c| PairClasses::new(&points, c))
                .map_err(|e| log::warn!("{pollutant}: {e}"))
                .ok()
        } else {
            log::warn!("{pollutant} ({source}): only {n} segments, need {MIN_SEGMENTS}");
            None
        };
        for (k, category) in vectors.categories.iter().enumerate() {
            let result = pairs.as_ref().and_then(|pc| {
                let x: Vec<f64> = common.iter().map(|c| vectors.vectors[c.0].fractions[k]).collect();
                pc.corrected_correlation(&x, &y)
                    .map_err(|e| log::info!("{category} x {pollutant} ({source}) skipped: {e}"))
                    .ok()
            });
            rows.push(CorrelationRow {
                category: category.clone(),
                pollutant: pollutant.clone(),
                source: source.to_string(),
                n,
                result,
            });
        }
    }
    rows
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_correlation_report<W: Write>(writer: W, rows: &[CorrelationRow]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["category", "pollutant", "source", "r", "n", "n_eff", "t", "p"])?;
    for row in rows {
        let r = row.result.as_ref();
        wtr.write_record([
            row.category.clone(),
            row.pollutant.clone(),
            row.source.clone(),
            opt(r.map(|x| x.r)),
            row.n.to_string(),
            opt(r.map(|x| x.n_eff)),
            opt(r.map(|x| x.t)),
            opt(r.map(|x| x.p)),
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("<report writer>", e))?;
    Ok(())
}

fn parse_opt(s: &str, what: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        return Ok(None);
    }
    match s.parse::<f64>() {
        Ok(v) if !v.is_nan() => Ok(Some(v)),
        _ => Err(Error::Parse(format!("bad {what} value {s:?}"))),
    }
}

pub fn parse_correlation_report<R: Read>(reader: R) -> Result<Vec<CorrelationRow>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != ["category", "pollutant", "source", "r", "n", "n_eff", "t", "p"] {
        return Err(Error::Parse("correlation report header mismatch".into()));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != 8 {
            return Err(Error::Parse("correlation report row needs 8 fields".into()));
        }
        let n: usize = rec[4]
            .parse()
            .map_err(|_| Error::Parse(format!("bad n {:?}", &rec[4])))?;
        let vals = [
            parse_opt(&rec[3], "r")?,
            parse_opt(&rec[5], "n_eff")?,
            parse_opt(&rec[6], "t")?,
            parse_opt(&rec[7], "p")?,
        ];
        let result = match vals {
            [Some(r), Some(n_eff), Some(t), Some(p)] => {
                if !(r.abs() <= 1.0 && (0.0..=1.0).contains(&p) && n_eff > 0.0) {
                    return Err(Error::Parse("correlation values out of range".into()));
                }
                Some(CorrelationResult {
                    r,
                    n,
                    n_eff,
                    t,
                    p,
                    fallback: false,
                })
            }
            [None, None, None, None] => None,
            _ => return Err(Error::Parse("partially filled correlation row".into())),
        };
        rows.push(CorrelationRow {
            category: rec[0].to_string(),
            pollutant: rec[1].to_string(),
            source: rec[2].to_string(),
            n,
            result,
        });
    }
    Ok(rows)
}

/// Pairwise correlations between category fractions. Entries are `None`
/// for categories that are constant over the segments.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossCorrelation {
    pub categories: Vec<String>,
    pub matrix: Vec<Vec<Option<f64>>>,
}

pub fn category_cross_correlation(vectors: &SmellVectors) -> Result<CrossCorrelation> {
    if vectors.len() < MIN_SEGMENTS {
        return Err(Error::Validation(format!(
            "cross-correlation needs at least {MIN_SEGMENTS} segments, got {}",
            vectors.len()
        )));
    }
    let k = vectors.categories.len();
    let cols: Vec<Vec<f64>> = (0..k)
        .map(|c| vectors.vectors.iter().map(|v| v.fractions[c]).collect())
        .collect();
    let defined: Vec<bool> = cols
        .iter()
        .map(|c| c.iter().any(|&v| (v - c[0]).abs() > 0.0))
        .collect();
    let mut matrix = vec![vec![None; k]; k];
    for a in 0..k {
        if !defined[a] {
            continue;
        }
        matrix[a][a] = Some(1.0);
        for b in (a + 1)..k {
            if defined[b] {
                let r = pearson(&cols[a], &cols[b]).ok();
                matrix[a][b] = r;
                matrix[b][a] = r;
            }
        }
    }
    Ok(CrossCorrelation {
        categories: vectors.categories.clone(),
        matrix,
    })
}

pub fn write_cross_correlation<W: Write>(writer: W, cc: &CrossCorrelation) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["category".to_string()];
    header.extend(cc.categories.iter().cloned());
    wtr.write_record(&header)?;
    for (name, row) in cc.categories.iter().zip(&cc.matrix) {
        let mut rec = vec![name.clone()];
        rec.extend(row.iter().map(|v| opt(*v)));
        wtr.write_record(&rec)?;
    }
    wtr.flush().map_err(|e| Error::io("<cross-correlation writer>", e))?;
    Ok(())
}

pub fn parse_cross_correlation<R: Read>(reader: R) -> Result<CrossCorrelation> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.is_empty() || &header[0] != "category" {
        return Err(Error::Parse("cross-correlation header must start with category".into()));
    }
    let categories: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut matrix = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != header.len() || categories.get(i).map(String::as_str) != Some(&rec[0]) {
            return Err(Error::Parse(format!("cross-correlation row {} malformed", i + 1)));
        }
        let row = rec
            .iter()
            .skip(1)
            .map(|s| parse_opt(s, "r"))
            .collect::<Result<Vec<_>>>()?;
        matrix.push(row);
    }
    if matrix.len() != categories.len() {
        return Err(Error::Parse("cross-correlation matrix is not square".into()));
    }
    Ok(CrossCorrelation { categories, matrix })
}

/// Everything the buffer sweep re-runs from assignment onwards.
#[derive(Debug, Clone)]
pub struct SweepInputs<'a> {
    pub segments: &'a [ProjectedSegment],
    /// Matched items with their projected locations.
    pub items: &'a [(ItemMatch, Xy)],
    pub taxonomy: &'a Taxonomy,
    pub profile: ProfileOptions,
    pub pollutants: &'a [(String, Field)],
    pub classes: ClassSpec,
    pub mode: AssignMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub size: f64,
    pub category: String,
    pub pollutant: String,
    pub r: Option<f64>,
    pub n_eff: Option<f64>,
    pub p: Option<f64>,
    /// Segments with a smell vector and a pollutant value.
    pub segments: usize,
    /// Why the row has no correlation, if it has none.
    pub flag: Option<String>,
}

/// Re-run assignment, profiling and correlation for each buffer size.
/// `pairs` lists (category, pollutant); empty means all combinations.
pub fn buffer_sweep(
    inputs: &SweepInputs,
    sizes: &[f64],
    pairs: &[(String, String)],
) -> Result<Vec<SweepRow>> {
    if sizes.is_empty() {
        return Err(Error::invalid("buffer sweep needs at least one size"));
    }
    if sizes.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
        return Err(Error::invalid("buffer sizes must be positive"));
    }
    if sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("buffer sizes must be strictly increasing"));
    }
    let locations: BTreeMap<String, Xy> = inputs
        .segments
        .iter()
        .map(|s| (s.id.clone(), s.midpoint()))
        .collect();
    let matches: Vec<ItemMatch> = inputs.items.iter().map(|(m, _)| m.clone()).collect();
    let mut rows = Vec::new();
    for &size in sizes {
        let index = build_index(inputs.segments, size)?;
        let assignment = assign_items(
            inputs.items.iter().map(|(m, p)| (m.id.as_str(), *p)),
            &index,
            inputs.mode,
        );
        let tags = segment_tags(&assignment, &matches);
        let vectors = smell_vectors(&tags, inputs.taxonomy, &inputs.profile);
        let report = category_pollutant_report(&vectors, inputs.pollutants, &locations, &inputs.classes, "all");
        for row in report {
            let wanted = pairs.is_empty()
                || pairs
                    .iter()
                    .any(|(c, p)| c == &row.category && p == &row.pollutant);
            if !wanted {
                continue;
            }
            let flag = match (&row.result, row.n < MIN_SEGMENTS) {
                (Some(_), _) => None,
                (None, true) => Some(format!("fewer than {MIN_SEGMENTS} segments")),
                (None, false) => Some("degenerate field".to_string()),
            };
            rows.push(SweepRow {
                size,
                category: row.category,
                pollutant: row.pollutant,
                r: row.result.map(|x| x.r),
                n_eff: row.result.map(|x| x.n_eff),
                p: row.result.map(|x| x.p),
                segments: row.n,
                flag,
            });
        }
    }
    Ok(rows)
}

const SWEEP_HEADER: [&str; 8] = ["size", "category", "pollutant", "r", "n_eff", "p", "segments", "flag"];

pub fn write_sweep<W: Write>(writer: W, rows: &[SweepRow]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(SWEEP_HEADER)?;
    for row in rows {
        wtr.write_record([
            row.size.to_string(),
            row.category.clone(),
            row.pollutant.clone(),
            opt(row.r),
            opt(row.n_eff),
            opt(row.p),
            row.segments.to_string(),
            row.flag.clone().unwrap_or_default(),
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("<sweep writer>", e))?;
    Ok(())
}

pub fn parse_sweep<R: Read>(reader: R) -> Result<Vec<SweepRow>> {
    let mut rdr = csv::Reader::from_reader(reader);
    if rdr.headers()?.iter().collect::<Vec<_>>() != SWEEP_HEADER {
        return Err(Error::Parse("sweep header mismatch".into()));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != SWEEP_HEADER.len() {
            return Err(Error::Parse("sweep row needs 8 fields".into()));
        }
        let size = parse_opt(&rec[0], "size")?.ok_or_else(|| Error::Parse("missing size".into()))?;
        rows.push(SweepRow {
            size,
            category: rec[1].to_string(),
            pollutant: rec[2].to_string(),
            r: parse_opt(&rec[3], "r")?,
            n_eff: parse_opt(&rec[4], "n_eff")?,
            p: parse_opt(&rec[5], "p")?,
            segments: rec[6]
                .parse()
                .map_err(|_| Error::Parse(format!("bad segments {:?}", &rec[6])))?,
            flag: (!rec[7].is_empty()).then(|| rec[7].to_string()),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn naive_pearson(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
        let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
        cov / (vx * vy).sqrt()
    }

    #[test]
    fn pearson_examples() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        assert!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
        assert!(pearson(&[1.0, 2.0], &[1.0, 2.0]).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let x: Vec<f64> = (0..50).map(|_| rng.gen()).collect();
            let y: Vec<f64> = (0..50).map(|_| rng.gen()).collect();
            assert!((pearson(&x, &y).unwrap() - naive_pearson(&x, &y)).abs() < 1e-12);
        }
    }

    #[test]
    fn class_lookup() {
        let c = DistanceClasses::new(vec![10.0, 20.0]).unwrap();
        assert_eq!(c.class_of(0.0), Some(0));
        assert_eq!(c.class_of(10.0), Some(0));
        assert_eq!(c.class_of(10.5), Some(1));
        assert_eq!(c.class_of(20.5), None);
        assert!(DistanceClasses::new(vec![10.0, 10.0]).is_err());
        assert!(DistanceClasses::new(vec![]).is_err());
        let e = DistanceClasses::equal_width(100.0, 4).unwrap();
        assert_eq!(e.bounds(), [25.0, 50.0, 75.0, 100.0]);
    }

    #[test]
    fn halves_correlogram() {
        // Two clusters 1 km apart, +1 on the left and -1 on the right.
        let mut points = Vec::new();
        let mut values = Vec::new();
        for i in 0..10 {
            points.push([i as f64, 0.0]);
            values.push(1.0);
            points.push([1000.0 + i as f64, 0.0]);
            values.push(-1.0);
        }
        let classes = DistanceClasses::new(vec![100.0, 2000.0]).unwrap();
        let c = spatial_autocorr(&values, &points, &classes).unwrap();
        assert!(c.rho[0] > 0.0 && c.rho[1] < 0.0);
        assert!(spatial_autocorr(&[1.0; 20], &points, &classes).is_err());
    }

    #[test]
    fn single_pair_class() {
        let points = [[0.0, 0.0], [1.0, 0.0], [100.0, 0.0]];
        let values = [1.0, 2.0, 4.0];
        let classes = DistanceClasses::new(vec![5.0, 200.0]).unwrap();
        let c = spatial_autocorr(&values, &points, &classes).unwrap();
        let z = standardize(&values).unwrap();
        assert_eq!(c.pairs, vec![1, 2]);
        assert!((c.rho[0] - z[0] * z[1]).abs() < 1e-12);
        assert!(c.empty_classes().is_empty());
    }

    #[test]
    fn white_noise_correlogram_near_zero() {
        // Products over distinct pairs of independent values are
        // uncorrelated, so each class mean has standard error 1/sqrt(pairs).
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (mut checks, mut outside) = (0, 0);
        for _ in 0..100 {
            let points: Vec<Xy> = (0..200).map(|_| [rng.gen_range(0.0..1000.0), rng.gen_range(0.0..1000.0)]).collect();
            let values: Vec<f64> = (0..200).map(|_| rng.sample(StandardNormal)).collect();
            let classes = DistanceClasses::from_spec(&ClassSpec::Count(10), &points).unwrap();
            let c = spatial_autocorr(&values, &points, &classes).unwrap();
            for k in 0..c.rho.len() {
                if c.pairs[k] > 0 {
                    checks += 1;
                    outside += usize::from(c.rho[k].abs() >= 3.0 / (c.pairs[k] as f64).sqrt());
                }
            }
        }
        assert!(outside * 100 <= checks, "{outside} of {checks} classes beyond 3 SE");
    }

    #[test]
    fn single_zero_class_recovers_naive_test() {
        // All points coincide: one class, correlogram is the centered
        // lag-0 cross product and n_eff is clipped to n.
        let points = vec![[0.0, 0.0]; 12];
        let x: Vec<f64> = (0..12).map(|i| i as f64).collect();
        let y: Vec<f64> = (0..12).map(|i| ((i * 7) % 12) as f64).collect();
        let classes = DistanceClasses::new(vec![1.0]).unwrap();
        let res = corrected_correlation(&x, &y, &points, &classes).unwrap();
        assert!(res.n_eff <= 12.0);
    }

    #[test]
    fn identical_fields() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let points: Vec<Xy> = (0..30).map(|_| [rng.gen_range(0.0..100.0), rng.gen_range(0.0..100.0)]).collect();
        let x: Vec<f64> = (0..30).map(|_| rng.gen()).collect();
        let classes = DistanceClasses::from_spec(&ClassSpec::default(), &points).unwrap();
        let res = corrected_correlation(&x, &x, &points, &classes).unwrap();
        assert!(res.r > 1.0 - 1e-12);
        assert!(res.p < 1e-12);
        assert!(corrected_correlation(&x[..5], &x[..5], &points[..5], &classes).is_err());
    }

    #[test]
    fn t_distribution_tail() {
        // With 10 degrees of freedom, |t| = 2.228 is the 5% two-sided cut.
        let df: f64 = 10.0;
        let t: f64 = 2.228_138_851_986;
        let r = t / (t * t + df).sqrt();
        let (tt, p) = t_test(r, df + 2.0);
        assert!((tt - t).abs() < 1e-9);
        assert!((p - 0.05).abs() < 1e-6, "{p}");
    }

    #[test]
    fn white_noise_keeps_sample_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let points: Vec<Xy> = (0..300).map(|_| [rng.gen_range(0.0..1000.0), rng.gen_range(0.0..1000.0)]).collect();
        let pc = PairClasses::new(&points, DistanceClasses::from_spec(&ClassSpec::default(), &points).unwrap()).unwrap();
        let mut rejections = 0;
        for _ in 0..200 {
            let x: Vec<f64> = (0..300).map(|_| rng.sample(StandardNormal)).collect();
            let y: Vec<f64> = (0..300).map(|_| rng.sample(StandardNormal)).collect();
            let res = pc.corrected_correlation(&x, &y).unwrap();
            assert!(res.n_eff / 300.0 >= 0.8, "{}", res.n_eff);
            rejections += usize::from(res.p < 0.05);
        }
        assert!((2..=25).contains(&rejections), "{rejections}");
    }

    #[test]
    fn cross_correlation_complement() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let vectors: Vec<_> = (0..12)
            .map(|i| {
                let a: f64 = rng.gen();
                crate::profile::SmellVector {
                    segment_id: format!("s{i:02}"),
                    tag_count: 30,
                    fractions: vec![a, 1.0 - a, 0.0],
                }
            })
            .collect();
        let sv = SmellVectors {
            categories: vec!["a".into(), "b".into(), "c".into()],
            vectors,
        };
        let cc = category_cross_correlation(&sv).unwrap();
        assert!((cc.matrix[0][1].unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(cc.matrix[0][0], Some(1.0));
        assert_eq!(cc.matrix[2][2], None);
        assert_eq!(cc.matrix[0][2], None);
        let mut buf = Vec::new();
        write_cross_correlation(&mut buf, &cc).unwrap();
        assert_eq!(parse_cross_correlation(&buf[..]).unwrap(), cc);
    }

    #[test]
    fn sweep_rejects_bad_sizes() {
        let tax = Taxonomy::new(&BTreeMap::new());
        let inputs = SweepInputs {
            segments: &[],
            items: &[],
            taxonomy: &tax,
            profile: ProfileOptions::default(),
            pollutants: &[],
            classes: ClassSpec::default(),
            mode: AssignMode::Multi,
        };
        assert!(buffer_sweep(&inputs, &[25.0, 10.0], &[]).is_err());
        assert!(buffer_sweep(&inputs, &[], &[]).is_err());
        assert!(buffer_sweep(&inputs, &[25.0], &[]).unwrap().is_empty());
    }

    #[test]
    fn report_round_trip() {
        let rows = vec![
            CorrelationRow {
                category: "nature".into(),
                pollutant: "NO2".into(),
                source: "all".into(),
                n: 40,
                result: Some(CorrelationResult {
                    r: -0.4,
                    n: 40,
                    n_eff: 21.5,
                    t: -1.9,
                    p: 0.07,
                    fallback: false,
                }),
            },
            CorrelationRow {
                category: "food".into(),
                pollutant: "NO2".into(),
                source: "twitter".into(),
                n: 4,
                result: None,
            },
        ];
        let mut buf = Vec::new();
        write_correlation_report(&mut buf, &rows).unwrap();
        assert_eq!(parse_correlation_report(&buf[..]).unwrap(), rows);
        let sweep = vec![SweepRow {
            size: 22.5,
            category: "nature".into(),
            pollutant: "NO2".into(),
            r: Some(-0.3),
            n_eff: Some(30.0),
            p: Some(0.01),
            segments: 44,
            flag: None,
        }];
        let mut buf = Vec::new();
        write_sweep(&mut buf, &sweep).unwrap();
        assert_eq!(parse_sweep(&buf[..]).unwrap(), sweep);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn correction_invariants(
            seed in 0u64..10_000,
            n in 10usize..40,
            a in 0.1f64..10.0,
            b in -5.0f64..5.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let points: Vec<Xy> = (0..n).map(|_| [rng.gen_range(0.0..500.0), rng.gen_range(0.0..500.0)]).collect();
            let x: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
            let y: Vec<f64> = x.iter().map(|v| v + rng.gen::<f64>()).collect();
            let classes = DistanceClasses::from_spec(&ClassSpec::Count(5), &points).unwrap();
            let res = corrected_correlation(&x, &y, &points, &classes).unwrap();
            prop_assert_eq!(res.r, pearson(&x, &y).unwrap());
            prop_assert!(res.n_eff <= n as f64 && res.n_eff >= 3.0);
            prop_assert!((0.0..=1.0).contains(&res.p));
            let ya: Vec<f64> = y.iter().map(|v| a * v + b).collect();
            let res2 = corrected_correlation(&x, &ya, &points, &classes).unwrap();
            prop_assert!((res.r - res2.r).abs() < 1e-9);
            prop_assert!((res.p - res2.p).abs() < 1e-6);
            let c = spatial_autocorr(&x, &points, &classes).unwrap();
            prop_assert!(c.rho.iter().all(|r| r.abs() <= 1.0));
        }
    }
}
