//! Grouped observations and their CSV forms.
//!
//! Two-level files have columns `group,x,y` with an optional `category`;
//! three-level files have `group,subgroup,x,y`. Group labels are arbitrary
//! strings and are numbered in the order they first appear.

use std::collections::HashMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Group {
    pub label: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TwoLevelData {
    pub groups: Vec<Group>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategorizedGroup {
    pub label: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// `true` marks category A.
    pub iota: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategorizedTwoLevelData {
    pub groups: Vec<CategorizedGroup>,
    pub category_a: String,
    pub category_b: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subgroup {
    pub label: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThreeLevelGroup {
    pub label: String,
    pub subgroups: Vec<Subgroup>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ThreeLevelData {
    pub groups: Vec<ThreeLevelGroup>,
}

impl TwoLevelData {
    pub fn n_obs(&self) -> usize {
        self.groups.iter().map(|g| g.x.len()).sum()
    }

    pub fn all_x(&self) -> Vec<f64> {
        self.groups.iter().flat_map(|g| g.x.iter().copied()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.groups.is_empty() {
            return Err(Error::InvalidInput("no groups".into()));
        }
        for g in &self.groups {
            check_xy(&g.label, &g.x, &g.y)?;
        }
        Ok(())
    }
}

impl CategorizedTwoLevelData {
    pub fn all_x(&self) -> Vec<f64> {
        self.groups.iter().flat_map(|g| g.x.iter().copied()).collect()
    }

    /// The same data with categories A and B exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            groups: self
                .groups
                .iter()
                .map(|g| CategorizedGroup { iota: g.iota.iter().map(|v| !v).collect(), ..g.clone() })
                .collect(),
            category_a: self.category_b.clone(),
            category_b: self.category_a.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.groups.is_empty() {
            return Err(Error::InvalidInput("no groups".into()));
        }
        let (mut any_a, mut any_b) = (false, false);
        for g in &self.groups {
            check_xy(&g.label, &g.x, &g.y)?;
            if g.iota.len() != g.x.len() {
                return Err(Error::DimensionMismatch(format!("group {}: indicator length differs", g.label)));
            }
            any_a |= g.iota.iter().any(|&v| v);
            any_b |= g.iota.iter().any(|&v| !v);
        }
        match (any_a, any_b) {
            (true, true) => Ok(()),
            (true, false) => Err(Error::SingleCategory(self.category_a.clone())),
            _ => Err(Error::SingleCategory(self.category_b.clone())),
        }
    }
}

impl ThreeLevelData {
    pub fn n_obs(&self) -> usize {
        self.groups.iter().flat_map(|g| &g.subgroups).map(|s| s.x.len()).sum()
    }

    pub fn all_x(&self) -> Vec<f64> {
        self.groups
            .iter()
            .flat_map(|g| &g.subgroups)
            .flat_map(|s| s.x.iter().copied())
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.groups.is_empty() {
            return Err(Error::InvalidInput("no groups".into()));
        }
        for g in &self.groups {
            if g.subgroups.is_empty() {
                return Err(Error::InvalidInput(format!("group {} has no subgroups", g.label)));
            }
            for s in &g.subgroups {
                check_xy(&format!("{}/{}", g.label, s.label), &s.x, &s.y)?;
            }
        }
        Ok(())
    }
}

fn check_xy(label: &str, x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch(format!("group {label}: {} x values but {} y values", x.len(), y.len())));
    }
    if x.is_empty() {
        return Err(Error::InvalidInput(format!("group {label} has no observations")));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("observations of group {label}")));
    }
    Ok(())
}

fn column(headers: &csv::StringRecord, name: &str, schema: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::InvalidInput(format!("missing column '{name}' (expected {schema})")))
}

fn parse_f64(field: &str, what: &str, line: u64) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| Error::InvalidInput(format!("line {line}: cannot parse {what} value '{field}'")))
}

struct Row {
    group: String,
    subgroup: Option<String>,
    category: Option<String>,
    x: f64,
    y: f64,
}

fn read_rows<R: Read>(reader: R, three_level: bool) -> Result<(Vec<Row>, bool)> {
    let schema = if three_level { "group,subgroup,x,y" } else { "group,x,y[,category]" };
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let gi = column(&headers, "group", schema)?;
    let si = if three_level { Some(column(&headers, "subgroup", schema)?) } else { None };
    let xi = column(&headers, "x", schema)?;
    let yi = column(&headers, "y", schema)?;
    let ci = if three_level { None } else { headers.iter().position(|h| h.trim() == "category") };
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let get = |i: usize| {
            rec.get(i)
                .ok_or_else(|| Error::InvalidInput(format!("line {line}: too few fields")))
        };
        rows.push(Row {
            group: get(gi)?.trim().to_string(),
            subgroup: si.map(|i| get(i).map(|s| s.trim().to_string())).transpose()?,
            category: ci.map(|i| get(i).map(|s| s.trim().to_string())).transpose()?,
            x: parse_f64(get(xi)?, "x", line)?,
            y: parse_f64(get(yi)?, "y", line)?,
        });
    }
    if rows.is_empty() {
        return Err(Error::InvalidInput("no data rows".into()));
    }
    Ok((rows, ci.is_some()))
}

/// Read `group,x,y` (any extra columns, including `category`, are ignored).
pub fn read_two_level<R: Read>(reader: R) -> Result<TwoLevelData> {
    let (rows, _) = read_rows(reader, false)?;
    let mut index = HashMap::new();
    let mut data = TwoLevelData::default();
    for r in rows {
        let i = *index.entry(r.group.clone()).or_insert_with(|| {
            data.groups.push(Group { label: r.group.clone(), x: vec![], y: vec![] });
            data.groups.len() - 1
        });
        data.groups[i].x.push(r.x);
        data.groups[i].y.push(r.y);
    }
    data.validate()?;
    Ok(data)
}

/// Read `group,x,y,category`. Category A is `category_a` when given, else the
/// lexicographically smallest label.
pub fn read_categorized<R: Read>(reader: R, category_a: Option<&str>) -> Result<CategorizedTwoLevelData> {
    let (rows, has_category) = read_rows(reader, false)?;
    if !has_category {
        return Err(Error::InvalidInput("missing column 'category' (expected group,x,y,category)".into()));
    }
    let mut labels: Vec<String> = rows.iter().filter_map(|r| r.category.clone()).collect();
    labels.sort();
    labels.dedup();
    if labels.len() > 2 {
        return Err(Error::InvalidInput(format!("contrast needs exactly two categories, found {}", labels.len())));
    }
    let a = match category_a {
        Some(a) => {
            if !labels.iter().any(|l| l == a) {
                return Err(Error::InvalidInput(format!("category '{a}' does not occur in the data")));
            }
            a.to_string()
        }
        None => labels[0].clone(),
    };
    let b = labels.iter().find(|l| **l != a).cloned();
    let Some(b) = b else {
        return Err(Error::SingleCategory(a));
    };

    let mut index = HashMap::new();
    let mut groups: Vec<CategorizedGroup> = Vec::new();
    for r in rows {
        let i = *index.entry(r.group.clone()).or_insert_with(|| {
            groups.push(CategorizedGroup { label: r.group.clone(), x: vec![], y: vec![], iota: vec![] });
            groups.len() - 1
        });
        groups[i].x.push(r.x);
        groups[i].y.push(r.y);
        groups[i].iota.push(r.category.as_deref() == Some(a.as_str()));
    }
    let data = CategorizedTwoLevelData { groups, category_a: a, category_b: b };
    data.validate()?;
    Ok(data)
}

/// Read `group,subgroup,x,y`. Subgroup labels are scoped to their group.
pub fn read_three_level<R: Read>(reader: R) -> Result<ThreeLevelData> {
    let (rows, _) = read_rows(reader, true)?;
    let mut gindex: HashMap<String, usize> = HashMap::new();
    let mut sindex: HashMap<(usize, String), usize> = HashMap::new();
    let mut data = ThreeLevelData::default();
    for r in rows {
        let i = *gindex.entry(r.group.clone()).or_insert_with(|| {
            data.groups.push(ThreeLevelGroup { label: r.group.clone(), subgroups: vec![] });
            data.groups.len() - 1
        });
        let sl = r.subgroup.expect("three-level rows carry a subgroup");
        let j = *sindex.entry((i, sl.clone())).or_insert_with(|| {
            data.groups[i].subgroups.push(Subgroup { label: sl.clone(), x: vec![], y: vec![] });
            data.groups[i].subgroups.len() - 1
        });
        data.groups[i].subgroups[j].x.push(r.x);
        data.groups[i].subgroups[j].y.push(r.y);
    }
    data.validate()?;
    Ok(data)
}

pub fn write_two_level<W: Write>(writer: W, data: &TwoLevelData) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["group", "x", "y"])?;
    for g in &data.groups {
        for (x, y) in g.x.iter().zip(&g.y) {
            w.write_record([g.label.clone(), x.to_string(), y.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_categorized<W: Write>(writer: W, data: &CategorizedTwoLevelData) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["group", "x", "y", "category"])?;
    for g in &data.groups {
        for ((x, y), a) in g.x.iter().zip(&g.y).zip(&g.iota) {
            let c = if *a { &data.category_a } else { &data.category_b };
            w.write_record([g.label.clone(), x.to_string(), y.to_string(), c.clone()])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_three_level<W: Write>(writer: W, data: &ThreeLevelData) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["group", "subgroup", "x", "y"])?;
    for g in &data.groups {
        for s in &g.subgroups {
            for (x, y) in s.x.iter().zip(&s.y) {
                w.write_record([g.label.clone(), s.label.clone(), x.to_string(), y.to_string()])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
