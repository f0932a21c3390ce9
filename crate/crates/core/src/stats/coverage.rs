use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dedup::{normalize_place, DedupReport, IncidentRecord};
use crate::error::{Error, Result};

const HEADER: [&str; 4] = ["city", "state", "crime_type", "count"];

/// `(city, state)` with both parts normalized for matching.
pub type Place = (String, String);

/// Incident counts keyed by place and crime type, e.g. official reports or
/// predicted incidents.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CountTable {
    counts: BTreeMap<(Place, String), u64>,
}

fn place(city: &str, state: &str) -> Place {
    (normalize_place(city), normalize_place(state))
}

impl CountTable {
    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn get(&self, city: &str, state: &str, crime_type: &str) -> Option<u64> {
        self.counts.get(&(place(city, state), normalize_place(crime_type))).copied()
    }

    /// Adds `count` to the entry, creating it if needed.
    pub fn add(&mut self, city: &str, state: &str, crime_type: &str, count: u64) {
        *self.counts.entry((place(city, state), normalize_place(crime_type))).or_default() += count;
    }

    pub fn crime_types(&self) -> BTreeSet<String> {
        self.counts.keys().map(|(_, c)| c.clone()).collect()
    }

    /// Places with an entry for `crime_type`, with their counts.
    pub fn for_crime(&self, crime_type: &str) -> BTreeMap<Place, u64> {
        let crime_type = normalize_place(crime_type);
        self.counts
            .iter()
            .filter(|((_, c), _)| *c == crime_type)
            .map(|((p, _), &n)| (p.clone(), n))
            .collect()
    }

    /// Unique incidents per place: each dedup cluster counts once, at the
    /// location of its first member.
    pub fn from_clusters(records: &[IncidentRecord], report: &DedupReport, crime_type: &str) -> Result<Self> {
        let by_id: BTreeMap<&str, &IncidentRecord> = records.iter().map(|r| (r.article_id.as_str(), r)).collect();
        let mut table = Self::default();
        for cluster in &report.clusters {
            let first = cluster
                .first()
                .and_then(|id| by_id.get(id.as_str()))
                .ok_or_else(|| Error::InvalidInput("dedup cluster refers to an unknown record".into()))?;
            table.add(&first.city, &first.state, crime_type, 1);
        }
        Ok(table)
    }

    /// Parses CSV text with the header `city,state,crime_type,count`.
    /// Repeated keys, negative or non-integer counts and a wrong header are
    /// errors; `row` in errors is the 1-based line number.
    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let header = reader.headers().map_err(|e| Error::Csv {
            row: 1,
            message: e.to_string(),
        })?;
        if header.iter().collect::<Vec<_>>() != HEADER {
            return Err(Error::Csv {
                row: 1,
                message: format!("expected header `{}`", HEADER.join(",")),
            });
        }
        let mut table = Self::default();
        for (i, record) in reader.records().enumerate() {
            let row = i + 2;
            let record = record.map_err(|e| Error::Csv {
                row,
                message: e.to_string(),
            })?;
            let field = |k: usize| record.get(k).unwrap_or_default();
            let count: u64 = field(3).parse().map_err(|_| Error::Csv {
                row,
                message: format!("count `{}` is not a non-negative integer", field(3)),
            })?;
            if field(0).is_empty() || field(1).is_empty() || field(2).is_empty() {
                return Err(Error::Csv {
                    row,
                    message: "city, state and crime_type must be non-empty".into(),
                });
            }
            let key = (place(field(0), field(1)), normalize_place(field(2)));
            if table.counts.insert(key, count).is_some() {
                return Err(Error::Csv {
                    row,
                    message: format!("duplicate entry for {}, {}, {}", field(0), field(1), field(2)),
                });
            }
        }
        Ok(table)
    }

    pub fn to_csv(&self) -> String {
        let mut out = HEADER.join(",");
        out.push('\n');
        for (((city, state), crime), n) in &self.counts {
            out.push_str(&format!("{city},{state},{crime},{n}\n"));
        }
        out
    }
}

/// Reads a count table from a CSV file; see [`CountTable::parse_csv`].
pub fn load_counts(path: impl AsRef<Path>) -> Result<CountTable> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    CountTable::parse_csv(&text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CityRatio {
    pub city: String,
    pub state: String,
    pub predicted: u64,
    pub official: u64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioSample {
    pub crime_type: String,
    pub cities: Vec<CityRatio>,
}

impl RatioSample {
    pub fn ratios(&self) -> Vec<f64> {
        self.cities.iter().map(|c| c.ratio).collect()
    }
}

/// Predicted-to-official ratio for every place listed in both tables for
/// `crime_type` whose official count is positive.
pub fn coverage_ratios(predicted: &CountTable, official: &CountTable, crime_type: &str) -> RatioSample {
    let pred = predicted.for_crime(crime_type);
    let cities: Vec<CityRatio> = official
        .for_crime(crime_type)
        .into_iter()
        .filter(|(_, n)| *n > 0)
        .filter_map(|(place, off)| {
            pred.get(&place).map(|&p| CityRatio {
                ratio: p as f64 / off as f64,
                city: place.0.clone(),
                state: place.1.clone(),
                predicted: p,
                official: off,
            })
        })
        .collect();
    if cities.is_empty() {
        tracing::warn!(crime_type, "no city has both predicted and official counts");
    }
    RatioSample {
        crime_type: normalize_place(crime_type),
        cities,
    }
}

/// Restricts every sample to the places present in all of them.
pub fn common_cities(samples: &[RatioSample]) -> Vec<RatioSample> {
    let Some(first) = samples.first() else {
        return Vec::new();
    };
    let mut shared: BTreeSet<(String, String)> = first.cities.iter().map(|c| (c.city.clone(), c.state.clone())).collect();
    for s in &samples[1..] {
        let these: BTreeSet<(String, String)> = s.cities.iter().map(|c| (c.city.clone(), c.state.clone())).collect();
        shared = shared.intersection(&these).cloned().collect();
    }
    samples
        .iter()
        .map(|s| RatioSample {
            crime_type: s.crime_type.clone(),
            cities: s
                .cities
                .iter()
                .filter(|c| shared.contains(&(c.city.clone(), c.state.clone())))
                .cloned()
                .collect(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const OFFICIAL: &str = "city,state,crime_type,count\nPortland,OR,hate,2\nSalem,OR,hate,0\nEugene,OR,hate,5\nBend,OR,homicide,3\n";

    #[test]
    fn parse_and_lookup() {
        let t = CountTable::parse_csv(OFFICIAL).unwrap();
        assert_eq!(t.len(), 4);
        assert_eq!(t.get(" portland ", "or", "HATE"), Some(2));
        assert_eq!(t.crime_types().len(), 2);
        assert_eq!(CountTable::parse_csv(&t.to_csv()).unwrap(), t);
    }

    #[test]
    fn csv_errors_name_the_row() {
        let dup = "city,state,crime_type,count\nA,B,hate,1\nC,D,hate,1\nA,B,hate,4\n";
        assert!(matches!(CountTable::parse_csv(dup), Err(Error::Csv { row: 4, .. })));
        let neg = "city,state,crime_type,count\nA,B,hate,-1\n";
        assert!(matches!(CountTable::parse_csv(neg), Err(Error::Csv { row: 2, .. })));
        assert!(matches!(CountTable::parse_csv("town,state,crime_type,count\n"), Err(Error::Csv { row: 1, .. })));
    }

    #[test]
    fn ratios_skip_missing_and_zero() {
        let official = CountTable::parse_csv(OFFICIAL).unwrap();
        let mut predicted = CountTable::default();
        predicted.add("Portland", "OR", "hate", 4);
        predicted.add("Salem", "OR", "hate", 1);
        predicted.add("Tacoma", "WA", "hate", 3);
        let s = coverage_ratios(&predicted, &official, "hate");
        assert_eq!(s.cities.len(), 1);
        assert_eq!(s.cities[0].ratio, 2.0);
        assert!(coverage_ratios(&predicted, &official, "kidnapping").cities.is_empty());
    }

    #[test]
    fn common_cities_intersects() {
        let c = |city: &str| CityRatio {
            city: city.into(),
            state: "x".into(),
            predicted: 1,
            official: 1,
            ratio: 1.0,
        };
        let a = RatioSample {
            crime_type: "a".into(),
            cities: vec![c("p"), c("q"), c("r")],
        };
        let b = RatioSample {
            crime_type: "b".into(),
            cities: vec![c("q"), c("r"), c("s")],
        };
        let out = common_cities(&[a, b]);
        assert!(out.iter().all(|s| s.cities.len() == 2));
    }
}
