//! Role-tagged tabular data for the standard fairness model.
//!
//! A table carries one binary protected column (contrast `x0` vs `x1`), blocks of
//! confounders `Z`, business-necessity mediators `B`, redlining mediators `R`, and
//! a real-valued outcome `Y`.

pub mod grouping;

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::{Design, Feature};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    Protected,
    Confounder,
    BusinessMediator,
    RedliningMediator,
    Outcome,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColumnKind {
    /// Levels are discovered from the data and sorted.
    Categorical,
    /// Levels are given in order.
    Ordinal(Vec<String>),
    Real,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub role: Role,
    pub kind: ColumnKind,
}

impl ColumnSpec {
    pub fn new(name: &str, role: Role, kind: ColumnKind) -> Self {
        ColumnSpec {
            name: name.to_string(),
            role,
            kind,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub columns: Vec<ColumnSpec>,
}

impl Schema {
    /// Assign roles to a header; every header column must have an assignment.
    pub fn from_header(
        header: &[String],
        roles: &HashMap<String, (Role, ColumnKind)>,
    ) -> Result<Self> {
        let columns = header
            .iter()
            .map(|h| {
                roles
                    .get(h)
                    .map(|(role, kind)| ColumnSpec::new(h, *role, kind.clone()))
                    .ok_or_else(|| Error::Schema(format!("column {h} has no role assignment")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Schema { columns })
    }

    fn validate(&self) -> Result<()> {
        let count = |r: Role| self.columns.iter().filter(|c| c.role == r).count();
        if count(Role::Protected) != 1 {
            return Err(Error::Schema(
                "exactly one protected column is required".into(),
            ));
        }
        if count(Role::Outcome) != 1 {
            return Err(Error::Schema(
                "exactly one outcome column is required".into(),
            ));
        }
        let mut seen = BTreeSet::new();
        for c in &self.columns {
            if !seen.insert(&c.name) {
                return Err(Error::Schema(format!("duplicate column {}", c.name)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ColumnData {
    Categorical {
        levels: Vec<String>,
        codes: Vec<u32>,
        ordinal: bool,
    },
    Real(Vec<f64>),
}

impl ColumnData {
    pub fn len(&self) -> usize {
        match self {
            ColumnData::Categorical { codes, .. } => codes.len(),
            ColumnData::Real(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn subset(&self, rows: &[usize]) -> ColumnData {
        match self {
            ColumnData::Categorical {
                levels,
                codes,
                ordinal,
            } => ColumnData::Categorical {
                levels: levels.clone(),
                codes: rows.iter().map(|&i| codes[i]).collect(),
                ordinal: *ordinal,
            },
            ColumnData::Real(v) => ColumnData::Real(rows.iter().map(|&i| v[i]).collect()),
        }
    }

    fn feature(&self, name: &str) -> Feature {
        match self {
            ColumnData::Categorical {
                levels,
                codes,
                ordinal,
            } => {
                let values = codes.iter().map(|&c| f64::from(c)).collect();
                if *ordinal {
                    Feature::ordinal(name, levels.len(), values)
                } else {
                    Feature::categorical(name, levels.len(), values)
                }
            }
            ColumnData::Real(v) => Feature::real(name, v.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub role: Role,
    pub data: ColumnData,
}

impl Column {
    pub fn categorical(name: &str, role: Role, levels: Vec<String>, codes: Vec<u32>) -> Self {
        Column {
            name: name.to_string(),
            role,
            data: ColumnData::Categorical {
                levels,
                codes,
                ordinal: false,
            },
        }
    }

    pub fn ordinal(name: &str, role: Role, levels: Vec<String>, codes: Vec<u32>) -> Self {
        Column {
            name: name.to_string(),
            role,
            data: ColumnData::Categorical {
                levels,
                codes,
                ordinal: true,
            },
        }
    }

    pub fn real(name: &str, role: Role, values: Vec<f64>) -> Self {
        Column {
            name: name.to_string(),
            role,
            data: ColumnData::Real(values),
        }
    }
}

/// Which blocks of the table enter a design matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    X,
    Z,
    B,
    R,
}

/// Validated standard-fairness-model table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SfmTable {
    x_name: String,
    x0: String,
    x1: String,
    /// `true` where the protected attribute equals `x1`.
    is_x1: Vec<bool>,
    z: Vec<Column>,
    b: Vec<Column>,
    r: Vec<Column>,
    y_name: String,
    y: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct BuiltTable {
    pub table: SfmTable,
    /// Rows dropped because their protected level was outside the contrast.
    pub dropped: usize,
}

/// Build a table from string-valued rows.
pub fn build_table(
    schema: &Schema,
    rows: &[Vec<String>],
    contrast: (&str, &str),
) -> Result<BuiltTable> {
    schema.validate()?;
    let width = schema.columns.len();
    let x_idx = schema
        .columns
        .iter()
        .position(|c| c.role == Role::Protected)
        .expect("validated");
    let mut kept = Vec::with_capacity(rows.len());
    let mut dropped = 0;
    for (i, row) in rows.iter().enumerate() {
        if row.len() != width {
            return Err(Error::Schema(format!(
                "row {i} has {} fields, schema has {width}",
                row.len()
            )));
        }
        let x = row[x_idx].as_str();
        if x == contrast.0 || x == contrast.1 {
            kept.push(row);
        } else {
            dropped += 1;
        }
    }
    let is_x1: Vec<bool> = kept.iter().map(|r| r[x_idx] == contrast.1).collect();

    let mut z = Vec::new();
    let mut b = Vec::new();
    let mut r = Vec::new();
    let mut y = None;
    for (c, spec) in schema.columns.iter().enumerate() {
        let raw: Vec<&str> = kept.iter().map(|row| row[c].as_str()).collect();
        match spec.role {
            Role::Protected => continue,
            Role::Outcome => {
                let vals = raw
                    .iter()
                    .enumerate()
                    .map(|(i, s)| {
                        s.trim()
                            .parse::<f64>()
                            .ok()
                            .filter(|v| v.is_finite())
                            .ok_or_else(|| {
                                Error::Schema(format!("non-numeric outcome {s:?} at row {i}"))
                            })
                    })
                    .collect::<Result<Vec<_>>>()?;
                y = Some(vals);
                continue;
            }
            _ => {}
        }
        let data = parse_column(spec, &raw)?;
        let col = Column {
            name: spec.name.clone(),
            role: spec.role,
            data,
        };
        match spec.role {
            Role::Confounder => z.push(col),
            Role::BusinessMediator => b.push(col),
            Role::RedliningMediator => r.push(col),
            Role::Protected | Role::Outcome => unreachable!(),
        }
    }
    let table = SfmTable::new(
        &schema.columns[x_idx].name,
        contrast,
        is_x1,
        z,
        b,
        r,
        &schema
            .columns
            .iter()
            .find(|c| c.role == Role::Outcome)
            .expect("validated")
            .name,
        y.expect("validated"),
    )?;
    Ok(BuiltTable { table, dropped })
}

fn parse_column(spec: &ColumnSpec, raw: &[&str]) -> Result<ColumnData> {
    match &spec.kind {
        ColumnKind::Real => raw
            .iter()
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| {
                        Error::Schema(format!("column {}: {s:?} is not a number", spec.name))
                    })
            })
            .collect::<Result<Vec<_>>>()
            .map(ColumnData::Real),
        ColumnKind::Categorical => {
            let levels: Vec<String> = raw
                .iter()
                .map(|s| s.to_string())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            let index: HashMap<&str, u32> = levels
                .iter()
                .enumerate()
                .map(|(i, l)| (l.as_str(), i as u32))
                .collect();
            Ok(ColumnData::Categorical {
                codes: raw.iter().map(|s| index[s]).collect(),
                levels,
                ordinal: false,
            })
        }
        ColumnKind::Ordinal(levels) => {
            let index: HashMap<&str, u32> = levels
                .iter()
                .enumerate()
                .map(|(i, l)| (l.as_str(), i as u32))
                .collect();
            let codes = raw
                .iter()
                .map(|s| {
                    index.get(s).copied().ok_or_else(|| {
                        Error::Schema(format!("column {}: unknown level {s:?}", spec.name))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(ColumnData::Categorical {
                levels: levels.clone(),
                codes,
                ordinal: true,
            })
        }
    }
}

impl SfmTable {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        x_name: &str,
        contrast: (&str, &str),
        is_x1: Vec<bool>,
        z: Vec<Column>,
        b: Vec<Column>,
        r: Vec<Column>,
        y_name: &str,
        y: Vec<f64>,
    ) -> Result<Self> {
        let n = is_x1.len();
        if contrast.0 == contrast.1 {
            return Err(Error::Schema("contrast levels must differ".into()));
        }
        if y.len() != n {
            return Err(Error::Schema(format!(
                "outcome has {} rows, expected {n}",
                y.len()
            )));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::Schema(format!("non-numeric outcome at row {i}")));
        }
        let mut names = BTreeSet::from([x_name.to_string(), y_name.to_string()]);
        for (role, block) in [
            (Role::Confounder, &z),
            (Role::BusinessMediator, &b),
            (Role::RedliningMediator, &r),
        ] {
            for c in block {
                if c.role != role {
                    return Err(Error::Schema(format!(
                        "column {} tagged {:?} placed in the {role:?} block",
                        c.name, c.role
                    )));
                }
                if c.data.len() != n {
                    return Err(Error::Schema(format!(
                        "column {} has {} rows, expected {n}",
                        c.name,
                        c.data.len()
                    )));
                }
                if !names.insert(c.name.clone()) {
                    return Err(Error::Schema(format!("duplicate column {}", c.name)));
                }
            }
        }
        if names.len() != 2 + z.len() + b.len() + r.len() {
            return Err(Error::Schema("protected and outcome names collide".into()));
        }
        let n1 = is_x1.iter().filter(|&&v| v).count();
        if n1 == n {
            return Err(Error::EmptyArm(format!("x0 ({})", contrast.0)));
        }
        if n1 == 0 {
            return Err(Error::EmptyArm(format!("x1 ({})", contrast.1)));
        }
        Ok(SfmTable {
            x_name: x_name.to_string(),
            x0: contrast.0.to_string(),
            x1: contrast.1.to_string(),
            is_x1,
            z,
            b,
            r,
            y_name: y_name.to_string(),
            y,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    pub fn contrast(&self) -> (&str, &str) {
        (&self.x0, &self.x1)
    }

    pub fn protected_name(&self) -> &str {
        &self.x_name
    }

    pub fn outcome_name(&self) -> &str {
        &self.y_name
    }

    pub fn is_x1(&self) -> &[bool] {
        &self.is_x1
    }

    pub fn outcome(&self) -> &[f64] {
        &self.y
    }

    pub fn block(&self, block: Block) -> &[Column] {
        match block {
            Block::X => &[],
            Block::Z => &self.z,
            Block::B => &self.b,
            Block::R => &self.r,
        }
    }

    /// Every column name paired with its role, in table order.
    pub fn roles(&self) -> Vec<(String, Role)> {
        let mut out = vec![(self.x_name.clone(), Role::Protected)];
        for c in self.z.iter().chain(&self.b).chain(&self.r) {
            out.push((c.name.clone(), c.role));
        }
        out.push((self.y_name.clone(), Role::Outcome));
        out
    }

    pub fn arm_counts(&self) -> (usize, usize) {
        let n1 = self.is_x1.iter().filter(|&&v| v).count();
        (self.n_rows() - n1, n1)
    }

    pub fn with_outcome(&self, y: Vec<f64>) -> Result<SfmTable> {
        let mut t = self.clone();
        if y.len() != t.n_rows() {
            return Err(Error::Schema("outcome length mismatch".into()));
        }
        t.y = y;
        Ok(t)
    }

    pub fn subset(&self, rows: &[usize]) -> Result<SfmTable> {
        let pick = |cols: &[Column]| -> Vec<Column> {
            cols.iter()
                .map(|c| Column {
                    name: c.name.clone(),
                    role: c.role,
                    data: c.data.subset(rows),
                })
                .collect()
        };
        SfmTable::new(
            &self.x_name,
            (&self.x0, &self.x1),
            rows.iter().map(|&i| self.is_x1[i]).collect(),
            pick(&self.z),
            pick(&self.b),
            pick(&self.r),
            &self.y_name,
            rows.iter().map(|&i| self.y[i]).collect(),
        )
    }

    /// Design matrix over the requested blocks. The protected attribute, when
    /// included, is a two-level feature coded 1 for `x1`.
    pub fn design(&self, blocks: &[Block]) -> Design {
        let mut features = Vec::new();
        for block in blocks {
            match block {
                Block::X => features.push(Feature::categorical(
                    &self.x_name,
                    2,
                    self.is_x1.iter().map(|&v| f64::from(u8::from(v))).collect(),
                )),
                other => {
                    features.extend(self.block(*other).iter().map(|c| c.data.feature(&c.name)))
                }
            }
        }
        if features.is_empty() {
            return Design::empty(self.n_rows());
        }
        Design::new(features).expect("table columns are validated")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> Schema {
        Schema {
            columns: vec![
                ColumnSpec::new("gender", Role::Protected, ColumnKind::Categorical),
                ColumnSpec::new("race", Role::Confounder, ColumnKind::Categorical),
                ColumnSpec::new("exp", Role::BusinessMediator, ColumnKind::Real),
                ColumnSpec::new("region", Role::RedliningMediator, ColumnKind::Categorical),
                ColumnSpec::new("score", Role::Outcome, ColumnKind::Real),
            ],
        }
    }

    fn row(g: &str, y: &str) -> Vec<String> {
        [g, "White", "3.5", "West", y]
            .iter()
            .map(|s| s.to_string())
            .collect()
    }

    #[test]
    fn ten_rows_pass_through() {
        let rows: Vec<_> = (0..10)
            .map(|i| row(if i < 6 { "Female" } else { "Male" }, "50"))
            .collect();
        let built = build_table(&schema(), &rows, ("Female", "Male")).unwrap();
        assert_eq!(built.table.n_rows(), 10);
        assert_eq!(built.table.arm_counts(), (6, 4));
        assert_eq!(built.dropped, 0);
        assert_eq!(built.table.contrast(), ("Female", "Male"));
    }

    #[test]
    fn non_contrast_levels_are_dropped_and_counted() {
        let rows = vec![
            row("Female", "1"),
            row("Other", "2"),
            row("Male", "3"),
            row("Other", "4"),
        ];
        let built = build_table(&schema(), &rows, ("Female", "Male")).unwrap();
        assert_eq!(built.table.n_rows(), 2);
        assert_eq!(built.dropped, 2);
    }

    #[test]
    fn single_arm_is_an_error() {
        let rows = vec![row("Female", "1"), row("Female", "2")];
        let err = build_table(&schema(), &rows, ("Female", "Male")).unwrap_err();
        assert_eq!(err.to_string(), "empty arm x1 (Male)");
    }

    #[test]
    fn non_numeric_outcome_is_an_error() {
        let rows = vec![row("Female", "1"), row("Male", "high")];
        assert!(matches!(
            build_table(&schema(), &rows, ("Female", "Male")),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn missing_role_assignment_is_an_error() {
        let header: Vec<String> = ["gender", "mystery"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let roles = HashMap::from([(
            "gender".to_string(),
            (Role::Protected, ColumnKind::Categorical),
        )]);
        assert!(Schema::from_header(&header, &roles).is_err());
    }

    #[test]
    fn roles_partition_all_columns() {
        let rows = vec![row("Female", "1"), row("Male", "2")];
        let t = build_table(&schema(), &rows, ("Female", "Male"))
            .unwrap()
            .table;
        let roles = t.roles();
        assert_eq!(roles.len(), 5);
        let names: BTreeSet<_> = roles.iter().map(|(n, _)| n.clone()).collect();
        assert_eq!(names.len(), 5);
        assert_eq!(
            roles.iter().filter(|(_, r)| *r == Role::Protected).count(),
            1
        );
        assert_eq!(roles.iter().filter(|(_, r)| *r == Role::Outcome).count(), 1);
    }

    #[test]
    fn design_codes_protected_attribute() {
        let rows = vec![row("Female", "1"), row("Male", "2")];
        let t = build_table(&schema(), &rows, ("Female", "Male"))
            .unwrap()
            .table;
        let d = t.design(&[Block::X, Block::Z, Block::B]);
        assert_eq!(d.n_features(), 3);
        assert_eq!(d.features()[0].values, vec![0.0, 1.0]);
    }
}
