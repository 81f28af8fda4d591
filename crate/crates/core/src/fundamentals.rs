//! Plant characteristics, marginal costs and coefficient bounds.
//!
//! A single-technology market prices power at the plant's variable cost, so
//! a regression of the power price on fuel and CO2 prices has the heat rate
//! `1/η` and the emission ratio `ε/η` as its true coefficients. Averaging
//! over a fleet can never exceed the worst plant, which gives upper bounds
//! for the fuel coefficients.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Thermal content of one tonne of coal, MWh_th.
pub const COAL_MWH_TH_PER_T: f64 = 8.141;
/// Thermal content of 1000 barrels of oil, MWh_th.
pub const OIL_MWH_TH_PER_KBBL: f64 = 1.700;

#[derive(Debug, Error, PartialEq)]
pub enum FundamentalsError {
    #[error("plant efficiency is zero")]
    DivisionByZero,
    #[error("invalid plant characteristics: {0}")]
    InvalidPlant(String),
    #[error("plant characteristics table is empty")]
    EmptyTable,
    #[error("demand {demand} MW exceeds available capacity {capacity} MW")]
    Scarcity { demand: f64, capacity: f64 },
    #[error("invalid bounds for {group}: lower {lower} > upper {upper}")]
    InvalidBounds { group: BoundGroup, lower: f64, upper: f64 },
}

pub type Result<T> = std::result::Result<T, FundamentalsError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Technology {
    Lignite,
    Coal,
    Gas,
    Oil,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantCharacteristics {
    pub technology: Technology,
    pub efficiency_old: f64,
    pub efficiency_new: f64,
    /// tCO2 per MWh_th; `None` for oil.
    pub co2_intensity: Option<f64>,
    /// MWh_th per native fuel unit (1 for fuels already quoted per MWh_th).
    pub conversion: f64,
}

impl PlantCharacteristics {
    pub fn validate(&self) -> Result<()> {
        for eta in [self.efficiency_old, self.efficiency_new] {
            if !(eta > 0.0 && eta <= 1.0) {
                return Err(FundamentalsError::InvalidPlant(format!("{:?}: efficiency {eta} outside (0, 1]", self.technology)));
            }
        }
        if let Some(eps) = self.co2_intensity {
            if !(eps >= 0.0) {
                return Err(FundamentalsError::InvalidPlant(format!("{:?}: negative CO2 intensity", self.technology)));
            }
        }
        if !(self.conversion > 0.0) {
            return Err(FundamentalsError::InvalidPlant(format!("{:?}: conversion must be positive", self.technology)));
        }
        Ok(())
    }

    /// Both efficiencies, old first.
    pub fn efficiencies(&self) -> [f64; 2] {
        [self.efficiency_old, self.efficiency_new]
    }
}

/// The built-in plant table (old and new fleet efficiencies, CO2 factors, conversions).
pub fn default_plants() -> Vec<PlantCharacteristics> {
    vec![
        PlantCharacteristics {
            technology: Technology::Lignite,
            efficiency_old: 0.30,
            efficiency_new: 0.43,
            co2_intensity: Some(0.4),
            conversion: 1.0,
        },
        PlantCharacteristics {
            technology: Technology::Coal,
            efficiency_old: 0.35,
            efficiency_new: 0.46,
            co2_intensity: Some(0.3),
            conversion: COAL_MWH_TH_PER_T,
        },
        PlantCharacteristics {
            technology: Technology::Gas,
            efficiency_old: 0.25,
            efficiency_new: 0.40,
            co2_intensity: Some(0.2),
            conversion: 1.0,
        },
        PlantCharacteristics {
            technology: Technology::Oil,
            efficiency_old: 0.24,
            efficiency_new: 0.44,
            co2_intensity: None,
            // Quoted per 1000-bbl lot.
            conversion: OIL_MWH_TH_PER_KBBL,
        },
    ]
}

/// Variable cost in EUR/MWh_el for a fuel price in the plant's native unit.
pub fn variable_cost(fuel_price: f64, co2_price: f64, plant: &PlantCharacteristics, efficiency: f64, other_cost: f64) -> Result<f64> {
    if efficiency == 0.0 {
        return Err(FundamentalsError::DivisionByZero);
    }
    let fuel_th = fuel_price / plant.conversion;
    let eps = plant.co2_intensity.unwrap_or(0.0);
    Ok(fuel_th / efficiency + eps * co2_price / efficiency + other_cost)
}

/// Variable cost from a fuel price already expressed per MWh_th.
pub fn variable_cost_th(fuel_price_th: f64, co2_price: f64, efficiency: f64, co2_intensity: f64, other_cost: f64) -> Result<f64> {
    if efficiency == 0.0 {
        return Err(FundamentalsError::DivisionByZero);
    }
    Ok(fuel_price_th / efficiency + co2_intensity * co2_price / efficiency + other_cost)
}

/// Regressor groups that carry a box constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundGroup {
    Autoregressive,
    Load,
    Res,
    Co2,
    Gas,
    Coal,
    Oil,
    Calendar,
}

impl BoundGroup {
    pub const ALL: [BoundGroup; 8] = [
        BoundGroup::Autoregressive,
        BoundGroup::Load,
        BoundGroup::Res,
        BoundGroup::Co2,
        BoundGroup::Gas,
        BoundGroup::Coal,
        BoundGroup::Oil,
        BoundGroup::Calendar,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BoundGroup::Autoregressive => "autoregressive",
            BoundGroup::Load => "load",
            BoundGroup::Res => "res",
            BoundGroup::Co2 => "co2",
            BoundGroup::Gas => "gas",
            BoundGroup::Coal => "coal",
            BoundGroup::Oil => "oil",
            BoundGroup::Calendar => "calendar",
        }
    }
}

impl fmt::Display for BoundGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BoundGroup {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        BoundGroup::ALL
            .into_iter()
            .find(|g| g.as_str() == s || (s == "lags" && *g == BoundGroup::Autoregressive))
            .ok_or_else(|| format!("unknown bound group `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    #[serde(with = "extended_f64")]
    pub lower: f64,
    #[serde(with = "extended_f64")]
    pub upper: f64,
}

/// JSON has no infinities: they travel as the strings `"inf"` and `"-inf"`.
mod extended_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_str(if *v > 0.0 { "inf" } else { "-inf" })
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" | "+inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                other => Err(serde::de::Error::custom(format!("invalid bound `{other}`"))),
            },
        }
    }
}

impl Interval {
    pub const FREE: Interval = Interval { lower: f64::NEG_INFINITY, upper: f64::INFINITY };

    pub fn new(lower: f64, upper: f64) -> Self {
        Interval { lower, upper }
    }

    pub fn contains(&self, value: f64, tol: f64) -> bool {
        value >= self.lower - tol && value <= self.upper + tol
    }

    pub fn is_free(&self) -> bool {
        self.lower == f64::NEG_INFINITY && self.upper == f64::INFINITY
    }
}

/// Physical-unit coefficient boxes per regressor group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientBounds {
    pub autoregressive: Interval,
    pub load: Interval,
    pub res: Interval,
    pub co2: Interval,
    pub gas: Interval,
    pub coal: Interval,
    pub oil: Interval,
}

impl CoefficientBounds {
    /// The published configuration.
    pub fn table4() -> Self {
        let inf = f64::INFINITY;
        CoefficientBounds {
            autoregressive: Interval::new(0.0, inf),
            load: Interval::new(0.0, inf),
            res: Interval::new(-inf, 0.0),
            co2: Interval::new(0.0, 1.33),
            gas: Interval::new(0.0, 4.0),
            coal: Interval::new(0.0, 0.123),
            oil: Interval::new(0.0, 0.588),
        }
    }

    /// Every group free.
    pub fn unconstrained() -> Self {
        CoefficientBounds {
            autoregressive: Interval::FREE,
            load: Interval::FREE,
            res: Interval::FREE,
            co2: Interval::FREE,
            gas: Interval::FREE,
            coal: Interval::FREE,
            oil: Interval::FREE,
        }
    }

    pub fn get(&self, group: BoundGroup) -> Interval {
        match group {
            BoundGroup::Autoregressive => self.autoregressive,
            BoundGroup::Load => self.load,
            BoundGroup::Res => self.res,
            BoundGroup::Co2 => self.co2,
            BoundGroup::Gas => self.gas,
            BoundGroup::Coal => self.coal,
            BoundGroup::Oil => self.oil,
            BoundGroup::Calendar => Interval::FREE,
        }
    }

    pub fn set(&mut self, group: BoundGroup, interval: Interval) -> Result<()> {
        if interval.lower > interval.upper || interval.lower.is_nan() || interval.upper.is_nan() {
            return Err(FundamentalsError::InvalidBounds { group, lower: interval.lower, upper: interval.upper });
        }
        let slot = match group {
            BoundGroup::Autoregressive => &mut self.autoregressive,
            BoundGroup::Load => &mut self.load,
            BoundGroup::Res => &mut self.res,
            BoundGroup::Co2 => &mut self.co2,
            BoundGroup::Gas => &mut self.gas,
            BoundGroup::Coal => &mut self.coal,
            BoundGroup::Oil => &mut self.oil,
            BoundGroup::Calendar => {
                return if interval.is_free() {
                    Ok(())
                } else {
                    Err(FundamentalsError::InvalidBounds { group, lower: interval.lower, upper: interval.upper })
                }
            }
        };
        *slot = interval;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BoundsMode {
    /// Published values.
    #[default]
    Table4,
    /// Values recomputed from the plant table.
    AppendixB,
}

impl FromStr for BoundsMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "table4" => Ok(BoundsMode::Table4),
            "appendixb" | "derived" => Ok(BoundsMode::AppendixB),
            other => Err(format!("unknown bounds mode `{other}` (expected table4|appendixB)")),
        }
    }
}

/// Derives fuel coefficient bounds from plant characteristics.
///
/// Upper bounds are the largest heat rate per fuel (converted to the fuel's
/// quoting unit) and the largest `ε/η` across all fossil plants, lignite
/// included. In [`BoundsMode::Table4`] the published numbers are returned
/// instead.
pub fn derive_bounds(plants: &[PlantCharacteristics], mode: BoundsMode) -> Result<CoefficientBounds> {
    if plants.is_empty() {
        return Err(FundamentalsError::EmptyTable);
    }
    for p in plants {
        p.validate()?;
    }
    if mode == BoundsMode::Table4 {
        return Ok(CoefficientBounds::table4());
    }

    let max_heat_rate = |tech: Technology| -> Option<f64> {
        plants
            .iter()
            .filter(|p| p.technology == tech)
            .flat_map(|p| p.efficiencies().map(|eta| 1.0 / eta / p.conversion))
            .reduce(f64::max)
    };
    let co2_ratio = plants
        .iter()
        .filter_map(|p| p.co2_intensity.map(|eps| p.efficiencies().map(|eta| eps / eta)))
        .flatten()
        .reduce(f64::max);

    let mut bounds = CoefficientBounds::table4();
    let upper = |v: Option<f64>| Interval::new(0.0, v.unwrap_or(0.0));
    bounds.co2 = upper(co2_ratio);
    bounds.gas = upper(max_heat_rate(Technology::Gas));
    bounds.coal = upper(max_heat_rate(Technology::Coal));
    bounds.oil = upper(max_heat_rate(Technology::Oil));
    Ok(bounds)
}

/// One block of the supply stack.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupplyBlock {
    pub capacity_mw: f64,
    pub marginal_cost: f64,
}

/// Clearing price of an inelastic demand against a supply stack.
///
/// The stack is sorted by marginal cost; the price is the cost of the block
/// that covers the last MW of demand (the cheapest block for zero demand).
pub fn merit_order_price(demand_mw: f64, stack: &[SupplyBlock]) -> Result<f64> {
    let capacity: f64 = stack.iter().map(|b| b.capacity_mw).sum();
    if stack.is_empty() || demand_mw > capacity {
        return Err(FundamentalsError::Scarcity { demand: demand_mw, capacity });
    }
    let mut order: Vec<&SupplyBlock> = stack.iter().filter(|b| b.capacity_mw > 0.0).collect();
    order.sort_by(|a, b| a.marginal_cost.total_cmp(&b.marginal_cost));
    let mut covered = 0.0;
    for block in &order {
        covered += block.capacity_mw;
        if covered >= demand_mw {
            return Ok(block.marginal_cost);
        }
    }
    Ok(order.last().map(|b| b.marginal_cost).unwrap_or(f64::NAN))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn gas_plant(eta: f64, eps: f64) -> PlantCharacteristics {
        PlantCharacteristics { technology: Technology::Gas, efficiency_old: eta, efficiency_new: eta, co2_intensity: Some(eps), conversion: 1.0 }
    }

    #[test]
    fn bounds_survive_json() {
        let b = CoefficientBounds::table4();
        let text = serde_json::to_string(&b).unwrap();
        assert!(text.contains("\"inf\"") && text.contains("\"-inf\""));
        assert_eq!(serde_json::from_str::<CoefficientBounds>(&text).unwrap(), b);
    }

    #[test]
    fn variable_cost_gas_example() {
        let plant = gas_plant(0.4, 0.2);
        assert_abs_diff_eq!(variable_cost(20.0, 30.0, &plant, 0.4, 0.0).unwrap(), 65.0, epsilon = 1e-12);
    }

    #[test]
    fn variable_cost_identity_efficiency() {
        let plant = gas_plant(1.0, 0.0);
        assert_eq!(variable_cost(37.5, 80.0, &plant, 1.0, 0.0).unwrap(), 37.5);
        assert_eq!(variable_cost(37.5, 80.0, &plant, 1.0, 2.5).unwrap(), 40.0);
    }

    #[test]
    fn variable_cost_coal_uses_conversion() {
        let coal = PlantCharacteristics {
            technology: Technology::Coal,
            efficiency_old: 0.46,
            efficiency_new: 0.46,
            co2_intensity: Some(0.3),
            conversion: COAL_MWH_TH_PER_T,
        };
        let expected = (100.0 / 8.141) / 0.46 + 0.3 * 30.0 / 0.46;
        let got = variable_cost(100.0, 30.0, &coal, 0.46, 0.0).unwrap();
        assert_abs_diff_eq!(got, expected, epsilon = 1e-12);
        assert_abs_diff_eq!(got, 46.27, epsilon = 0.01);
    }

    #[test]
    fn zero_efficiency_is_an_error() {
        assert_eq!(variable_cost(1.0, 1.0, &gas_plant(0.4, 0.2), 0.0, 0.0), Err(FundamentalsError::DivisionByZero));
    }

    #[test]
    fn appendix_b_bounds() {
        let b = derive_bounds(&default_plants(), BoundsMode::AppendixB).unwrap();
        assert_eq!(b.gas.upper, 4.0);
        assert_eq!(b.co2.upper, 0.4 / 0.3);
        assert_abs_diff_eq!(b.co2.upper, 1.3333, epsilon = 1e-4);
        assert_abs_diff_eq!(b.oil.upper, (1000.0 / 1700.0) / 0.24, epsilon = 1e-12);
        assert_abs_diff_eq!(b.oil.upper, 2.4510, epsilon = 1e-4);
        assert_abs_diff_eq!(b.coal.upper, 1.0 / 0.35 / 8.141, epsilon = 1e-12);
        assert_eq!(b.res, Interval::new(f64::NEG_INFINITY, 0.0));
    }

    #[test]
    fn table4_bounds_override() {
        let b = derive_bounds(&default_plants(), BoundsMode::Table4).unwrap();
        assert_eq!(b, CoefficientBounds::table4());
        assert_eq!(b.oil.upper, 0.588);
        assert_eq!(b.coal.upper, 0.123);
    }

    #[test]
    fn derived_bounds_dominate_every_plant() {
        let plants = default_plants();
        let b = derive_bounds(&plants, BoundsMode::AppendixB).unwrap();
        for p in &plants {
            for eta in p.efficiencies() {
                let rate = 1.0 / eta / p.conversion;
                match p.technology {
                    Technology::Gas => assert!(b.gas.upper >= rate),
                    Technology::Coal => assert!(b.coal.upper >= rate),
                    Technology::Oil => assert!(b.oil.upper >= rate),
                    Technology::Lignite => {}
                }
                if let Some(eps) = p.co2_intensity {
                    assert!(b.co2.upper >= eps / eta);
                }
            }
        }
    }

    #[test]
    fn default_bounds_are_non_degenerate() {
        for bounds in [CoefficientBounds::table4(), derive_bounds(&default_plants(), BoundsMode::AppendixB).unwrap()] {
            for g in BoundGroup::ALL {
                let iv = bounds.get(g);
                assert!(iv.lower < iv.upper, "{g}");
            }
        }
    }

    #[test]
    fn empty_table_is_rejected() {
        assert_eq!(derive_bounds(&[], BoundsMode::AppendixB), Err(FundamentalsError::EmptyTable));
    }

    #[test]
    fn merit_order_examples() {
        let stack = [SupplyBlock { capacity_mw: 10.0, marginal_cost: 50.0 }, SupplyBlock { capacity_mw: 10.0, marginal_cost: 5.0 }];
        assert_eq!(merit_order_price(0.0, &stack).unwrap(), 5.0);
        assert_eq!(merit_order_price(15.0, &stack).unwrap(), 50.0);
        assert_eq!(merit_order_price(10.0, &stack).unwrap(), 5.0);
        assert!(matches!(merit_order_price(25.0, &stack), Err(FundamentalsError::Scarcity { .. })));
    }

    #[test]
    fn merit_order_matches_brute_force_prefix_scan() {
        let stack = [
            SupplyBlock { capacity_mw: 7.0, marginal_cost: 31.0 },
            SupplyBlock { capacity_mw: 3.0, marginal_cost: 12.0 },
            SupplyBlock { capacity_mw: 5.0, marginal_cost: 80.0 },
            SupplyBlock { capacity_mw: 4.0, marginal_cost: 44.0 },
        ];
        for step in 0..=190 {
            let demand = step as f64 * 0.1;
            // smallest price p such that capacity with cost <= p covers demand
            let mut costs: Vec<f64> = stack.iter().map(|b| b.marginal_cost).collect();
            costs.sort_by(f64::total_cmp);
            let oracle = costs
                .into_iter()
                .find(|&p| stack.iter().filter(|b| b.marginal_cost <= p).map(|b| b.capacity_mw).sum::<f64>() >= demand)
                .unwrap();
            assert_eq!(merit_order_price(demand, &stack).unwrap(), oracle, "demand {demand}");
        }
    }
}
