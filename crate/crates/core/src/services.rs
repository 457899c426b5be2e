//! Facility-needs extrapolation from ward populations.
//!
//! The toilet calculator applies the BS 6465-1 per-100-users ratios to the
//! whole ward population: `need = ceil(pop / 100)`, male units `4 * need`,
//! female units `8 * need`. Both standards are applied to the total population
//! with no gender split unless a share is requested explicitly.

use std::fmt::Write as _;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::zonal::ZoneResult;

#[derive(Debug, Error)]
pub enum ServicesError {
    #[error("population must be non-negative, got {0}")]
    NegativePopulation(f64),
    #[error("population must be finite, got {0}")]
    NonFinite(f64),
    #[error("rate must be positive, got {0}")]
    InvalidRate(f64),
    #[error("male share must lie in [0, 1], got {0}")]
    InvalidShare(f64),
    #[error("CSV schema: {0}")]
    Schema(String),
    #[error("CSV row {row}: {reason}")]
    Parse { row: usize, reason: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaleFixtures {
    pub wc: u32,
    pub urinal: u32,
    pub washbasin: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FemaleFixtures {
    pub wc: u32,
    pub washbasin: u32,
}

/// Sanitary fixtures required per `persons_per_unit` users.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FacilityStandard {
    pub name: String,
    pub male_fixtures_per_100: MaleFixtures,
    pub female_fixtures_per_100: FemaleFixtures,
    pub persons_per_unit: u32,
}

impl FacilityStandard {
    /// BS 6465-1:2006+A1:2009 public toilet provision.
    pub fn bs6465() -> Self {
        Self {
            name: "BS 6465-1:2006+A1:2009".into(),
            male_fixtures_per_100: MaleFixtures {
                wc: 4,
                urinal: 4,
                washbasin: 4,
            },
            female_fixtures_per_100: FemaleFixtures { wc: 8, washbasin: 8 },
            persons_per_unit: 100,
        }
    }

    /// Looks a standard up by CLI selector.
    pub fn by_name(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "bs6465" | "bs6465-1" => Some(Self::bs6465()),
            _ => None,
        }
    }

    /// Male units per toilet block: the block count times the WC ratio alone,
    /// not times all male fixtures combined.
    pub fn male_units_per_block(&self) -> u64 {
        u64::from(self.male_fixtures_per_100.wc)
    }

    pub fn female_units_per_block(&self) -> u64 {
        u64::from(self.female_fixtures_per_100.wc)
    }
}

impl Default for FacilityStandard {
    fn default() -> Self {
        Self::bs6465()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ToiletNeed {
    pub toilets_need: u64,
    pub male_units: u64,
    pub female_units: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeedsRow {
    pub ward_name: String,
    pub no_of_persons: f64,
    pub toilets_need: u64,
    pub male_units: u64,
    pub female_units: u64,
}

fn check_population(pop: f64) -> Result<(), ServicesError> {
    if !pop.is_finite() {
        return Err(ServicesError::NonFinite(pop));
    }
    if pop < 0.0 {
        return Err(ServicesError::NegativePopulation(pop));
    }
    Ok(())
}

fn blocks(pop: f64, persons_per_unit: u32) -> u64 {
    (pop / f64::from(persons_per_unit)).ceil() as u64
}

pub fn toilets_need(pop: f64, std: &FacilityStandard) -> Result<ToiletNeed, ServicesError> {
    check_population(pop)?;
    let need = blocks(pop, std.persons_per_unit);
    Ok(ToiletNeed {
        toilets_need: need,
        male_units: need * std.male_units_per_block(),
        female_units: need * std.female_units_per_block(),
    })
}

/// Needs when the population is split by sex before applying each standard.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitNeed {
    pub male_need: u64,
    pub female_need: u64,
    pub male_units: u64,
    pub female_units: u64,
}

pub fn split_toilets_need(pop: f64, male_share: f64, std: &FacilityStandard) -> Result<SplitNeed, ServicesError> {
    check_population(pop)?;
    if !(0.0..=1.0).contains(&male_share) {
        return Err(ServicesError::InvalidShare(male_share));
    }
    let male_need = blocks(pop * male_share, std.persons_per_unit);
    let female_need = blocks(pop * (1.0 - male_share), std.persons_per_unit);
    Ok(SplitNeed {
        male_need,
        female_need,
        male_units: male_need * std.male_units_per_block(),
        female_units: female_need * std.female_units_per_block(),
    })
}

/// `ceil(pop * units_per_100 / 100)`.
pub fn per_capita_need(pop: f64, units_per_100: f64) -> Result<u64, ServicesError> {
    check_population(pop)?;
    if !(units_per_100.is_finite() && units_per_100 > 0.0) {
        return Err(ServicesError::InvalidRate(units_per_100));
    }
    Ok((pop * units_per_100 / 100.0).ceil() as u64)
}

/// A ward name and its estimated population.
#[derive(Debug, Clone, PartialEq)]
pub struct WardPopulation {
    pub ward_name: String,
    pub persons: f64,
}

impl From<&ZoneResult> for WardPopulation {
    fn from(r: &ZoneResult) -> Self {
        Self {
            ward_name: r.attrs.ward_name.clone(),
            persons: r.stats.sum,
        }
    }
}

pub fn needs_table(wards: &[WardPopulation], std: &FacilityStandard) -> Result<Vec<NeedsRow>, ServicesError> {
    wards
        .iter()
        .map(|w| {
            let n = toilets_need(w.persons, std)?;
            Ok(NeedsRow {
                ward_name: w.ward_name.clone(),
                no_of_persons: w.persons,
                toilets_need: n.toilets_need,
                male_units: n.male_units,
                female_units: n.female_units,
            })
        })
        .collect()
}

/// Rows ordered by descending need; ties keep input order.
pub fn sorted_by_need(rows: &[NeedsRow]) -> Vec<&NeedsRow> {
    let mut sorted: Vec<&NeedsRow> = rows.iter().collect();
    sorted.sort_by(|a, b| {
        b.toilets_need
            .cmp(&a.toilets_need)
            .then(b.no_of_persons.total_cmp(&a.no_of_persons))
    });
    sorted
}

pub const NEEDS_CSV_HEADER: [&str; 5] = ["ward_name", "no_of_persons", "toilets_need", "male_units", "female_units"];

pub fn write_needs_csv<W: Write>(rows: &[NeedsRow], destination: W) -> Result<(), ServicesError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(destination);
    w.write_record(NEEDS_CSV_HEADER)?;
    for r in rows {
        w.write_record([
            r.ward_name.clone(),
            r.no_of_persons.to_string(),
            r.toilets_need.to_string(),
            r.male_units.to_string(),
            r.female_units.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn needs_csv_string(rows: &[NeedsRow]) -> String {
    let mut buf = Vec::new();
    write_needs_csv(rows, &mut buf).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("CSV output is UTF-8")
}

pub fn read_needs_csv<R: Read>(source: R) -> Result<Vec<NeedsRow>, ServicesError> {
    let mut r = csv::ReaderBuilder::new().from_reader(source);
    let header = r.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != NEEDS_CSV_HEADER {
        return Err(ServicesError::Schema(format!(
            "expected header {}",
            NEEDS_CSV_HEADER.join(",")
        )));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = i + 2;
        let bad = |col: &str| ServicesError::Parse {
            row,
            reason: format!("bad {col}"),
        };
        rows.push(NeedsRow {
            ward_name: rec[0].to_string(),
            no_of_persons: rec[1].parse().map_err(|_| bad("no_of_persons"))?,
            toilets_need: rec[2].parse().map_err(|_| bad("toilets_need"))?,
            male_units: rec[3].parse().map_err(|_| bad("male_units"))?,
            female_units: rec[4].parse().map_err(|_| bad("female_units"))?,
        });
    }
    Ok(rows)
}

/// Reads ward names and populations from a zonal CSV. Only `ward_name` and
/// `_sum` are required; other columns are ignored.
pub fn read_ward_populations<R: Read>(source: R) -> Result<Vec<WardPopulation>, ServicesError> {
    let mut r = csv::ReaderBuilder::new().from_reader(source);
    let header = r.headers()?.clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| ServicesError::Schema(format!("missing column {name}")))
    };
    let name_col = col("ward_name")?;
    let sum_col = col("_sum")?;
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let persons = rec[sum_col].parse::<f64>().map_err(|_| ServicesError::Parse {
            row: i + 2,
            reason: format!("_sum is not a number: {:?}", &rec[sum_col]),
        })?;
        out.push(WardPopulation {
            ward_name: rec[name_col].to_string(),
            persons,
        });
    }
    Ok(out)
}

/// Plain-text note shipped next to a needs table.
pub fn standard_manifest(std: &FacilityStandard, male_share: Option<f64>) -> String {
    let m = std.male_fixtures_per_100;
    let f = std.female_fixtures_per_100;
    let mut out = String::new();
    let _ = writeln!(out, "standard: {}", std.name);
    let _ = writeln!(out, "persons_per_unit: {}", std.persons_per_unit);
    let _ = writeln!(
        out,
        "male fixtures per {} users: {} WC, {} urinal, {} washbasin",
        std.persons_per_unit, m.wc, m.urinal, m.washbasin
    );
    let _ = writeln!(
        out,
        "female fixtures per {} users: {} WC, {} washbasin",
        std.persons_per_unit, f.wc, f.washbasin
    );
    match male_share {
        None => {
            let _ = writeln!(out, "population basis: total ward population for both standards (no sex split)");
        }
        Some(s) => {
            let _ = writeln!(out, "population basis: male share {s}, female share {}", 1.0 - s);
        }
    }
    let _ = writeln!(out, "toilets_need = ceil(no_of_persons / {})", std.persons_per_unit);
    let _ = writeln!(
        out,
        "male_units = {} * toilets_need; female_units = {} * toilets_need",
        std.male_units_per_block(),
        std.female_units_per_block()
    );
    let _ = writeln!(
        out,
        "caveat: male_units counts {} units per block although the standard lists {} male fixtures \
         ({} WC + {} urinal + {} washbasin); this matches the Lagos Island ward needs table",
        std.male_units_per_block(),
        m.wc + m.urinal + m.washbasin,
        m.wc,
        m.urinal,
        m.washbasin
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lagos_island_rows() {
        let std = FacilityStandard::bs6465();
        let cases = [
            (1515.259098, 16, 64, 128),
            (2.404627, 1, 4, 8),
            (0.0, 0, 0, 0),
            (5780.848736, 58, 232, 464),
            (980.252693, 10, 40, 80),
        ];
        for (pop, need, male, female) in cases {
            let n = toilets_need(pop, &std).unwrap();
            assert_eq!((n.toilets_need, n.male_units, n.female_units), (need, male, female), "pop {pop}");
        }
    }

    #[test]
    fn invalid_population() {
        let std = FacilityStandard::bs6465();
        assert!(matches!(toilets_need(-1.0, &std), Err(ServicesError::NegativePopulation(_))));
        assert!(matches!(toilets_need(f64::NAN, &std), Err(ServicesError::NonFinite(_))));
        assert!(matches!(per_capita_need(-1.0, 4.0), Err(ServicesError::NegativePopulation(_))));
        assert!(matches!(per_capita_need(1.0, 0.0), Err(ServicesError::InvalidRate(_))));
    }

    #[test]
    fn per_capita() {
        assert_eq!(per_capita_need(0.0, 4.0).unwrap(), 0);
        assert_eq!(per_capita_need(100.0, 4.0).unwrap(), 4);
        assert_eq!(per_capita_need(150.0, 4.0).unwrap(), 6);
        assert_eq!(per_capita_need(101.0, 1.0).unwrap(), 2);
    }

    #[test]
    fn split_shares() {
        let std = FacilityStandard::bs6465();
        let s = split_toilets_need(1000.0, 0.5, &std).unwrap();
        assert_eq!((s.male_need, s.female_need, s.male_units, s.female_units), (5, 5, 20, 40));
        assert!(split_toilets_need(1000.0, 1.5, &std).is_err());
    }

    #[test]
    fn empty_table_is_header_only() {
        let rows = needs_table(&[], &FacilityStandard::bs6465()).unwrap();
        assert_eq!(needs_csv_string(&rows), "ward_name,no_of_persons,toilets_need,male_units,female_units\n");
    }

    #[test]
    fn ward_population_schema() {
        let ok = "ward_name,_count,_sum,_mean\nAjele,8,980.252693176,122.5\n";
        let wards = read_ward_populations(ok.as_bytes()).unwrap();
        assert_eq!(wards[0].persons, 980.252693176);
        let missing = "ward_name,_count,_mean\nAjele,8,122.5\n";
        assert!(matches!(read_ward_populations(missing.as_bytes()), Err(ServicesError::Schema(_))));
    }

    #[test]
    fn manifest_mentions_caveat() {
        let text = standard_manifest(&FacilityStandard::bs6465(), None);
        assert!(text.contains("12 male fixtures"));
        assert!(text.contains("no sex split"));
    }
}
