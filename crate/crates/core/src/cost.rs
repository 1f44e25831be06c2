//! Deployment cost and cost-effectiveness.
//!
//! The system cost is `C = N_AP (C_f + N_t C_v)`: a fixed cost per site and a
//! variable cost per antenna. Costs are dimensionless units, normally with
//! `C_f = 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Itemized cost components.
///
/// `c_ls`, `c_cpu` and `c_mo` (spectrum license, CPU, operation and
/// maintenance) are network-wide; the rest are per site or per antenna.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ItemizedCosts {
    pub c_ls: f64,
    pub c_cpu: f64,
    pub c_mo: f64,
    pub c_sc: f64,
    pub c_ps: f64,
    pub c_fb: f64,
    pub c_bb: f64,
    pub c_ant: f64,
    pub c_rf: f64,
}

impl ItemizedCosts {
    fn values(&self) -> [(&'static str, f64); 9] {
        [
            ("c_ls", self.c_ls),
            ("c_cpu", self.c_cpu),
            ("c_mo", self.c_mo),
            ("c_sc", self.c_sc),
            ("c_ps", self.c_ps),
            ("c_fb", self.c_fb),
            ("c_bb", self.c_bb),
            ("c_ant", self.c_ant),
            ("c_rf", self.c_rf),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CostModel {
    Aggregated { c_f: f64, c_v: f64 },
    Itemized(ItemizedCosts),
}

impl CostModel {
    pub fn aggregated(c_f: f64, c_v: f64) -> Result<Self> {
        let model = CostModel::Aggregated { c_f, c_v };
        model.validate()?;
        Ok(model)
    }

    pub fn itemized(items: ItemizedCosts) -> Result<Self> {
        let model = CostModel::Itemized(items);
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        let check = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::config(format!("cost {name} must be finite and >= 0, got {v}")))
            }
        };
        match self {
            CostModel::Aggregated { c_f, c_v } => {
                check("c_f", *c_f)?;
                check("c_v", *c_v)?;
                if *c_f <= 0.0 {
                    return Err(Error::config("cost c_f must be > 0"));
                }
            }
            CostModel::Itemized(items) => {
                for (name, v) in items.values() {
                    check(name, v)?;
                }
                let per_site =
                    items.c_ls + items.c_cpu + items.c_mo + items.c_sc + items.c_ps + items.c_fb + items.c_bb;
                if per_site <= 0.0 {
                    return Err(Error::config("itemized costs give a zero fixed cost C_f"));
                }
            }
        }
        Ok(())
    }

    /// `C_f`, which for itemized costs spreads the network-wide items over
    /// the sites.
    pub fn fixed_cost(&self, sites: usize) -> f64 {
        match self {
            CostModel::Aggregated { c_f, .. } => *c_f,
            CostModel::Itemized(c) => (c.c_ls + c.c_cpu + c.c_mo) / sites as f64 + c.c_sc + c.c_ps + c.c_fb + c.c_bb,
        }
    }

    /// `C_v`
    pub fn variable_cost(&self) -> f64 {
        match self {
            CostModel::Aggregated { c_v, .. } => *c_v,
            CostModel::Itemized(c) => c.c_ant + c.c_rf,
        }
    }
}

/// `C = N_AP (C_f + N_t C_v)`.
pub fn total_cost(model: &CostModel, sites: usize, antennas_per_ap: usize) -> f64 {
    sites as f64 * (model.fixed_cost(sites) + antennas_per_ap as f64 * model.variable_cost())
}

/// Sum rate (bit/s/Hz) per cost unit.
pub fn cost_effectiveness(sum_rate: f64, model: &CostModel, sites: usize, antennas_per_ap: usize) -> f64 {
    sum_rate / total_cost(model, sites, antennas_per_ap)
}

/// The `[cost]` table of a configuration file. Either the aggregated keys
/// (`c_f`, `c_v`) or the itemized ones may appear, never both.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSpec {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c_f: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c_v: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c_ls: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c_cpu: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c_mo: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c_sc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c_ps: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c_fb: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c_bb: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c_ant: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c_rf: Option<f64>,
}

pub const DEFAULT_FIXED_COST: f64 = 1.0;
pub const DEFAULT_VARIABLE_COST: f64 = 0.05;

impl CostSpec {
    /// The table with defaults filled in, as `show-config` prints it.
    pub fn resolved(&self) -> Result<CostSpec> {
        Ok(match self.to_model()? {
            CostModel::Aggregated { c_f, c_v } => CostSpec { c_f: Some(c_f), c_v: Some(c_v), ..Default::default() },
            CostModel::Itemized(_) => *self,
        })
    }

    /// Resolves the table; an empty table is `C_f = 1`, `C_v = 0.05`.
    pub fn to_model(&self) -> Result<CostModel> {
        let items =
            [self.c_ls, self.c_cpu, self.c_mo, self.c_sc, self.c_ps, self.c_fb, self.c_bb, self.c_ant, self.c_rf];
        let any_item = items.iter().any(Option::is_some);
        let any_aggregate = self.c_f.is_some() || self.c_v.is_some();
        if any_item && any_aggregate {
            return Err(Error::config("cost table mixes aggregated (c_f, c_v) and itemized keys"));
        }
        if any_item {
            let v = |o: Option<f64>| o.unwrap_or(0.0);
            CostModel::itemized(ItemizedCosts {
                c_ls: v(self.c_ls),
                c_cpu: v(self.c_cpu),
                c_mo: v(self.c_mo),
                c_sc: v(self.c_sc),
                c_ps: v(self.c_ps),
                c_fb: v(self.c_fb),
                c_bb: v(self.c_bb),
                c_ant: v(self.c_ant),
                c_rf: v(self.c_rf),
            })
        } else {
            CostModel::aggregated(self.c_f.unwrap_or(DEFAULT_FIXED_COST), self.c_v.unwrap_or(DEFAULT_VARIABLE_COST))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    /// Network-wide items once, site items per site, antenna items per antenna.
    fn direct_total(c: &ItemizedCosts, sites: usize, n_t: usize) -> f64 {
        c.c_ls + c.c_cpu + c.c_mo + sites as f64 * (c.c_sc + c.c_ps + c.c_fb + c.c_bb + n_t as f64 * (c.c_ant + c.c_rf))
    }

    #[test]
    fn totals() {
        let m = CostModel::aggregated(1.0, 0.05).unwrap();
        assert!((total_cost(&m, 300, 1) - 315.0).abs() < 1e-12);
        let m = CostModel::aggregated(1.0, 0.5).unwrap();
        assert_eq!(total_cost(&m, 6, 50), 156.0);
    }

    #[test]
    fn effectiveness() {
        let m = CostModel::aggregated(1.0, 0.05).unwrap();
        assert_eq!(cost_effectiveness(0.0, &m, 300, 1), 0.0);
        assert!((cost_effectiveness(100.0, &m, 300, 1) - 0.317_460_317).abs() < 1e-9);
        let doubled = CostModel::aggregated(2.0, 0.1).unwrap();
        let ratio = cost_effectiveness(50.0, &m, 30, 10) / cost_effectiveness(50.0, &doubled, 30, 10);
        assert!((ratio - 2.0).abs() < 1e-12);
    }

    #[test]
    fn itemized_matches_direct_expansion() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        for _ in 0..1000 {
            let mut draw = || rng.random::<f64>() * 10.0;
            let items = ItemizedCosts {
                c_ls: draw(),
                c_cpu: draw(),
                c_mo: draw(),
                c_sc: draw(),
                c_ps: draw(),
                c_fb: draw(),
                c_bb: draw(),
                c_ant: draw(),
                c_rf: draw(),
            };
            let model = CostModel::itemized(items).unwrap();
            let sites = 1 + (rng.random::<u32>() % 300) as usize;
            let n_t = 1 + (rng.random::<u32>() % 50) as usize;
            let a = total_cost(&model, sites, n_t);
            let b = direct_total(&items, sites, n_t);
            assert!((a - b).abs() <= 1e-12 * b, "{a} {b}");
        }
    }

    #[test]
    fn cost_falls_with_antennas_per_site() {
        let m = CostModel::aggregated(1.0, 0.25).unwrap();
        let nts = [1usize, 2, 4, 10, 12, 15, 20, 25, 30, 50];
        let costs: Vec<f64> = nts.iter().map(|&nt| total_cost(&m, 300 / nt, nt)).collect();
        assert!(costs.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn table_resolution() {
        let empty = CostSpec::default().to_model().unwrap();
        assert_eq!(empty, CostModel::Aggregated { c_f: 1.0, c_v: 0.05 });
        let table = CostSpec { c_sc: Some(1.0), c_ant: Some(0.1), ..Default::default() };
        assert!(matches!(table.to_model().unwrap(), CostModel::Itemized(_)));
        let mixed = CostSpec { c_f: Some(1.0), c_ant: Some(0.1), ..Default::default() };
        assert!(mixed.to_model().is_err());
        assert!(CostSpec { c_f: Some(0.0), ..Default::default() }.to_model().is_err());
        assert!(CostSpec { c_v: Some(-1.0), ..Default::default() }.to_model().is_err());
        assert!(CostSpec { c_ant: Some(1.0), ..Default::default() }.to_model().is_err());
        let filled = CostSpec { c_v: Some(0.25), ..Default::default() }.resolved().unwrap();
        assert_eq!((filled.c_f, filled.c_v), (Some(1.0), Some(0.25)));
    }
}
