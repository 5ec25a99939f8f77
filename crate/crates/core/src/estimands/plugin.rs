use super::{Arm, EstimandSpec, Quantity};
use crate::error::{Error, Result};
use crate::learners::{Design, LearnerFactory};
use crate::sfm::{Block, SfmTable};

/// Designs used by the outcome regressions, with X as feature 0.
pub(crate) struct Designs {
    pub xz: Design,
    pub xrz: Design,
    pub xbrz: Design,
}

impl Designs {
    pub fn new(table: &SfmTable) -> Self {
        Designs {
            xz: table.design(&[Block::X, Block::Z]),
            xrz: table.design(&[Block::X, Block::R, Block::Z]),
            xbrz: table.design(&[Block::X, Block::B, Block::R, Block::Z]),
        }
    }
}

pub(crate) fn at_arm(design: &Design, arm: Arm) -> Design {
    design.with_constant(0, arm.code())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn stage<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(name))
}

/// Sequential-regression plug-in estimate, with every learner fit on the whole table.
pub fn plugin_sequential(
    table: &SfmTable,
    spec: &EstimandSpec,
    factory: &dyn LearnerFactory,
) -> Result<f64> {
    let q = spec.quantity()?;
    let d = Designs::new(table);
    let y = table.outcome();
    let value = match q {
        Quantity::Q1 | Quantity::Q2 => {
            let mu = stage("mu(X,Z)", factory.regressor(&d.xz, y, None))?;
            mean(&stage("mu(X,Z)", mu.predict(&at_arm(&d.xz, spec.y_arm)))?)
        }
        Quantity::Q3 => {
            let mu3 = stage("mu3", factory.regressor(&d.xbrz, y, None))?;
            let m3 = stage("mu3", mu3.predict(&at_arm(&d.xbrz, spec.y_arm)))?;
            let mw = stage("muW", factory.regressor(&d.xz, &m3, None))?;
            mean(&stage("muW", mw.predict(&at_arm(&d.xz, spec.b_arm)))?)
        }
        Quantity::Q4 | Quantity::Q5 => {
            let mu3 = stage("mu3", factory.regressor(&d.xbrz, y, None))?;
            let m3 = stage("mu3", mu3.predict(&at_arm(&d.xbrz, spec.y_arm)))?;
            let mu2 = stage("mu2", factory.regressor(&d.xrz, &m3, None))?;
            let m2 = stage("mu2", mu2.predict(&at_arm(&d.xrz, spec.b_arm)))?;
            let mu1 = stage("mu1", factory.regressor(&d.xz, &m2, None))?;
            mean(&stage("mu1", mu1.predict(&at_arm(&d.xz, spec.r_arm)))?)
        }
    };
    if !value.is_finite() {
        return Err(Error::NonFinite {
            quantity: q.to_string(),
            row: 0,
        });
    }
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::TabularFactory;
    use crate::sfm::{Column, Role};

    fn table(x: Vec<bool>, y: Vec<f64>) -> SfmTable {
        let n = x.len();
        let z = vec![Column::categorical(
            "z",
            Role::Confounder,
            vec!["a".into()],
            vec![0; n],
        )];
        let b = vec![Column::categorical(
            "b",
            Role::BusinessMediator,
            vec!["0".into(), "1".into()],
            (0..n as u32).map(|i| i % 2).collect(),
        )];
        let r = vec![Column::categorical(
            "r",
            Role::RedliningMediator,
            vec!["0".into(), "1".into()],
            (0..n as u32).map(|i| (i / 2) % 2).collect(),
        )];
        SfmTable::new("x", ("F", "M"), x, z, b, r, "y", y).unwrap()
    }

    #[test]
    fn constant_outcome() {
        let t = table(
            vec![false, true, false, true, true, false, true, false],
            vec![4.0; 8],
        );
        for q in Quantity::ALL {
            let v = plugin_sequential(&t, &q.spec(), &TabularFactory).unwrap();
            assert!((v - 4.0).abs() < 1e-12, "{q}");
        }
    }

    #[test]
    fn x1_arm_mean() {
        let x = vec![false, true, false, true, false, true];
        let y = x.iter().map(|&v| if v { 7.0 } else { 1.0 }).collect();
        let v = plugin_sequential(&table(x, y), &Quantity::Q2.spec(), &TabularFactory).unwrap();
        assert_eq!(v, 7.0);
    }
}
