//! Seeded synthetic market: random-walk fuels, seasonal load and renewables,
//! and hourly prices cleared against a three-technology merit order.

use std::f64::consts::PI;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{Datelike, Duration, LocalResult, NaiveDate, TimeZone, Weekday};
use chrono_tz::Europe::Berlin;
use epf_core::fundamentals::{default_plants, merit_order_price, variable_cost, PlantCharacteristics, SupplyBlock, Technology};
use epf_core::ingest::{
    adjust_clock_change, parse_hourly_reader, Commodity, FuturesQuote, FuturesStore, HourlyDataset, TzMode, HOURLY_HEADER, MAX_MATURITY,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

pub const HOURLY_FILE: &str = "hourly.csv";
pub const FUTURES_FILE: &str = "futures.csv";

/// Days of futures history generated before the first hourly day.
pub const FUTURES_LEAD_DAYS: i64 = 400;
/// Lignite is not exchange traded; its fuel cost is fixed (EUR/MWh_th).
pub const LIGNITE_FUEL_COST: f64 = 6.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub years: u32,
    pub seed: u64,
    pub start: NaiveDate,
    /// Drop every random disturbance of the price (fuels and load still vary).
    pub zero_noise: bool,
    /// Standard deviation of the additive hourly price noise (EUR/MWh).
    pub price_noise: f64,
    /// Daily log-volatility of the fuel random walks, in commodity order CO2, gas, coal, oil.
    pub fuel_volatility: [f64; 4],
    pub fuel_start: [f64; 4],
    /// Daily log-drift of the fuel random walks; futures price the expected spot
    /// at delivery, so maturity `m` trades at `spot · exp(drift · 30 · m)`.
    pub fuel_drift: f64,
    /// Installed capacity (MW) of lignite, coal and gas.
    pub capacity: [f64; 3],
    /// Blocks per technology, spanning the old to new fleet efficiencies.
    pub blocks: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            years: 5,
            seed: 42,
            start: NaiveDate::from_ymd_opt(2015, 1, 1).expect("valid date"),
            zero_noise: false,
            price_noise: 3.0,
            fuel_volatility: [0.02, 0.02, 0.015, 0.015],
            fuel_start: [25.0, 25.0, 90.0, 60.0],
            fuel_drift: 0.03 / 365.0,
            capacity: [18_000.0, 22_000.0, 40_000.0],
            blocks: 5,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SyntheticError {
    #[error("generate: at least 4 years are required, got {0}")]
    TooShort(u32),
    #[error("generate: {0}")]
    Invalid(String),
    #[error("generate: io: {0}")]
    Io(#[from] std::io::Error),
    #[error("generate: {0}")]
    Ingest(#[from] epf_core::ingest::IngestError),
}

/// One generated local-clock row as written to the hourly file.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRow {
    pub timestamp: String,
    pub values: [f64; 9],
    /// Merit-order clearing price before noise.
    pub merit_price: f64,
}

#[derive(Debug, Clone)]
pub struct SyntheticMarket {
    pub config: SyntheticConfig,
    pub rows: Vec<RawRow>,
    pub futures: FuturesStore,
    /// Daily spot fuel prices from `start - FUTURES_LEAD_DAYS`, commodity order CO2, gas, coal, oil.
    pub spot: Vec<[f64; 4]>,
    /// The clock-regularized dataset obtained by ingesting `rows`.
    pub dataset: HourlyDataset,
}

fn plant(tech: Technology) -> PlantCharacteristics {
    default_plants().into_iter().find(|p| p.technology == tech).expect("plant table covers lignite, coal and gas")
}

/// Supply stack for one day's fuel prices (CO2, gas, coal in native units).
pub fn supply_stack(config: &SyntheticConfig, co2: f64, gas: f64, coal: f64) -> Vec<SupplyBlock> {
    let techs = [(Technology::Lignite, LIGNITE_FUEL_COST), (Technology::Coal, coal), (Technology::Gas, gas)];
    let mut stack = Vec::with_capacity(3 * config.blocks);
    for ((tech, fuel), cap) in techs.into_iter().zip(config.capacity) {
        let p = plant(tech);
        for b in 0..config.blocks {
            let w = if config.blocks == 1 { 0.5 } else { b as f64 / (config.blocks - 1) as f64 };
            let eta = p.efficiency_new + w * (p.efficiency_old - p.efficiency_new);
            let cost = variable_cost(fuel, co2, &p, eta, 0.0).expect("efficiencies are positive");
            stack.push(SupplyBlock { capacity_mw: cap / config.blocks as f64, marginal_cost: cost });
        }
    }
    stack
}

/// Futures-to-spot ratio for maturity `m` months.
pub fn maturity_factor(config: &SyntheticConfig, m: u8) -> f64 {
    (config.fuel_drift * 30.0 * m as f64).exp()
}

fn season(day: NaiveDate, peak_doy: f64) -> f64 {
    (2.0 * PI * (day.ordinal() as f64 - peak_doy) / 365.25).cos()
}

fn fmt_offset(secs: i32) -> String {
    let sign = if secs < 0 { '-' } else { '+' };
    let a = secs.abs();
    format!("{sign}{:02}:{:02}", a / 3600, (a % 3600) / 60)
}

/// Local wall-clock hours of `day` with their UTC offsets (23, 24 or 25 entries).
fn local_hours(day: NaiveDate) -> Vec<(u32, i32)> {
    let mut out = Vec::with_capacity(25);
    for h in 0..24u32 {
        let naive = day.and_hms_opt(h, 0, 0).expect("valid hour");
        match Berlin.from_local_datetime(&naive) {
            LocalResult::Single(dt) => out.push((h, dt.offset_secs())),
            LocalResult::Ambiguous(a, b) => {
                out.push((h, a.offset_secs()));
                out.push((h, b.offset_secs()));
            }
            LocalResult::None => {}
        }
    }
    out
}

trait OffsetSecs {
    fn offset_secs(&self) -> i32;
}

impl OffsetSecs for chrono::DateTime<chrono_tz::Tz> {
    fn offset_secs(&self) -> i32 {
        use chrono::Offset;
        self.offset().fix().local_minus_utc()
    }
}

/// Generates `years` calendar years of hourly data starting `config.start`.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<SyntheticMarket, SyntheticError> {
    if config.years < 4 {
        return Err(SyntheticError::TooShort(config.years));
    }
    if config.blocks == 0 || config.capacity.iter().any(|c| !(*c > 0.0)) || !(config.price_noise >= 0.0) {
        return Err(SyntheticError::Invalid("capacities and block count must be positive, noise non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let start = config.start;
    let end = NaiveDate::from_ymd_opt(start.year() + config.years as i32, start.month(), start.day())
        .ok_or_else(|| SyntheticError::Invalid("end date out of range".into()))?
        - Duration::days(1);
    let n_days = (end - start).num_days() as usize + 1;
    let lead = FUTURES_LEAD_DAYS as usize;

    // Fuels: geometric random walks on every calendar day.
    let mut spot = vec![config.fuel_start; lead + n_days];
    for d in 1..spot.len() {
        for c in 0..4 {
            let s = config.fuel_volatility[c];
            let z: f64 = StandardNormal.sample(&mut rng);
            spot[d][c] = spot[d - 1][c] * (config.fuel_drift + s * z - 0.5 * s * s).exp();
        }
    }
    let mut futures = FuturesStore::new();
    for (d, fuels) in spot.iter().enumerate() {
        let date = start - Duration::days(FUTURES_LEAD_DAYS) + Duration::days(d as i64);
        if matches!(date.weekday(), Weekday::Sat | Weekday::Sun) {
            continue;
        }
        for (c, commodity) in Commodity::ALL.into_iter().enumerate() {
            for m in 1..=MAX_MATURITY {
                let settle = fuels[c] * maturity_factor(config, m);
                futures.insert(FuturesQuote { quote_date: date, commodity, maturity_months: m, settle })?;
            }
        }
    }

    // Daily weather states.
    let noise = |rng: &mut ChaCha8Rng, sd: f64| -> f64 { Normal::new(0.0, sd).expect("finite sd").sample(rng) };
    let mut wind_state = 0.0;
    let mut rows = Vec::with_capacity(n_days * 24 + 8);
    let years_total = n_days as f64 / 365.25;
    for d in 0..n_days {
        let day = start + Duration::days(d as i64);
        let fuels = spot[lead + d - 1];
        let stack = supply_stack(config, fuels[0], fuels[1], fuels[2]);
        let capacity: f64 = config.capacity.iter().sum();
        let trend = 1500.0 * (d as f64 / 365.25 - 0.5 * years_total);
        let weekend = match day.weekday() {
            Weekday::Sat => -5000.0,
            Weekday::Sun => -7500.0,
            _ => 0.0,
        };
        let annual_load = 6000.0 * season(day, 15.0);
        wind_state = 0.7 * wind_state + noise(&mut rng, 4000.0);
        let wind_level = (13_000.0 + 6000.0 * season(day, 15.0) + wind_state).max(500.0);
        let cloud = rng.random_range(0.45..1.0);
        let solar_peak = (9000.0 + 8000.0 * season(day, 172.0)) * cloud;
        let hours = local_hours(day);
        for &(h, offset) in &hours {
            let hf = h as f64;
            let daily = -(2.0 * PI * (hf - 13.0) / 24.0).cos();
            let load = 56_000.0 + trend + weekend + annual_load + 7000.0 * daily + noise(&mut rng, 1200.0);
            let solar = (solar_peak * (PI * (hf - 5.5) / 14.0).sin()).max(0.0);
            let solar = if (5.5..=19.5).contains(&hf) { solar } else { 0.0 };
            let wind_on = (wind_level * (1.0 + 0.05 * noise(&mut rng, 1.0))).max(0.0);
            let wind_off = (0.3 * wind_level * (1.0 + 0.1 * noise(&mut rng, 1.0))).max(0.0);
            let fc = |rng: &mut ChaCha8Rng, v: f64, rel: f64| (v * (1.0 + rel * noise(rng, 1.0))).max(0.0);
            let load_fc = load + noise(&mut rng, 600.0);
            let solar_fc = fc(&mut rng, solar, 0.08);
            let wind_on_fc = fc(&mut rng, wind_on, 0.08);
            let wind_off_fc = fc(&mut rng, wind_off, 0.08);
            let residual = (load - solar - wind_on - wind_off).clamp(0.0, 0.995 * capacity);
            let merit = merit_order_price(residual, &stack).expect("residual demand is below capacity");
            let eps = if config.zero_noise { 0.0 } else { noise(&mut rng, config.price_noise.max(f64::MIN_POSITIVE)) };
            let price = if config.zero_noise { merit } else { merit + eps };
            rows.push(RawRow {
                timestamp: format!("{day}T{h:02}:00{}", fmt_offset(offset)),
                values: [price, load, load_fc, solar, solar_fc, wind_on, wind_on_fc, wind_off, wind_off_fc],
                merit_price: merit,
            });
        }
    }
    let mut csv_bytes = Vec::new();
    write_hourly(&rows, &mut csv_bytes)?;
    let raw = parse_hourly_reader(csv_bytes.as_slice(), TzMode::Local)?;
    let (dataset, _) = adjust_clock_change(&raw)?;
    Ok(SyntheticMarket { config: config.clone(), rows, futures, spot, dataset })
}

/// Writes rows in the raw hourly input format.
pub fn write_hourly<W: Write>(rows: &[RawRow], writer: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(HOURLY_HEADER)?;
    for r in rows {
        let mut rec = vec![r.timestamp.clone()];
        rec.extend(r.values.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()
}

impl SyntheticMarket {
    /// Spot fuel prices on `day`, commodity order CO2, gas, coal, oil.
    pub fn spot_on(&self, day: NaiveDate) -> Option<[f64; 4]> {
        let i = (day - self.config.start).num_days() + FUTURES_LEAD_DAYS;
        usize::try_from(i).ok().and_then(|i| self.spot.get(i)).copied()
    }

    /// Writes `hourly.csv` and `futures.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(PathBuf, PathBuf), SyntheticError> {
        std::fs::create_dir_all(dir)?;
        let hourly = dir.join(HOURLY_FILE);
        let futures = dir.join(FUTURES_FILE);
        write_hourly(&self.rows, std::io::BufWriter::new(std::fs::File::create(&hourly)?))?;
        self.futures.write_csv(std::io::BufWriter::new(std::fs::File::create(&futures)?))?;
        Ok((hourly, futures))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SyntheticMarket {
        generate_synthetic(&SyntheticConfig { years: 4, seed, ..SyntheticConfig::default() }).unwrap()
    }

    #[test]
    fn rejects_short_spans() {
        assert!(matches!(
            generate_synthetic(&SyntheticConfig { years: 3, ..SyntheticConfig::default() }),
            Err(SyntheticError::TooShort(3))
        ));
    }

    #[test]
    fn identical_seed_identical_files() {
        let a = small(7);
        let b = small(7);
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        a.write(dir_a.path()).unwrap();
        b.write(dir_b.path()).unwrap();
        for f in [HOURLY_FILE, FUTURES_FILE] {
            assert_eq!(std::fs::read(dir_a.path().join(f)).unwrap(), std::fs::read(dir_b.path().join(f)).unwrap());
        }
        assert_eq!(a.dataset.content_hash(), b.dataset.content_hash());
        assert_ne!(a.dataset.content_hash(), small(8).dataset.content_hash());
    }

    #[test]
    fn dataset_covers_whole_years_and_clock_changes() {
        let m = small(1);
        assert_eq!(m.dataset.start_day(), NaiveDate::from_ymd_opt(2015, 1, 1).unwrap());
        assert_eq!(m.dataset.end_day(), NaiveDate::from_ymd_opt(2018, 12, 31).unwrap());
        // 4 short and 4 long days
        assert_eq!(m.rows.len(), m.dataset.n_days() * 24);
        assert!(m.rows.iter().any(|r| r.timestamp.starts_with("2015-10-25T02:00+02:00")));
        assert!(m.rows.iter().any(|r| r.timestamp.starts_with("2015-10-25T02:00+01:00")));
        assert!(!m.rows.iter().any(|r| r.timestamp.starts_with("2015-03-29T02:00")));
    }

    #[test]
    fn zero_noise_price_is_the_merit_order_price() {
        let m = generate_synthetic(&SyntheticConfig { years: 4, seed: 3, zero_noise: true, ..SyntheticConfig::default() }).unwrap();
        for r in &m.rows {
            assert_eq!(r.values[0], r.merit_price);
        }
    }

    #[test]
    fn futures_are_spot_times_maturity_factor() {
        let m = small(2);
        let day = NaiveDate::from_ymd_opt(2016, 6, 1).unwrap();
        let s = m.spot_on(day).unwrap();
        for (c, commodity) in Commodity::ALL.into_iter().enumerate() {
            for mat in [1u8, 6, 13] {
                let q = m.futures.last_quote_on_or_before(day, commodity, mat).unwrap();
                assert!((q - s[c] * maturity_factor(&m.config, mat)).abs() < 1e-12);
            }
        }
        // weekends carry forward from Friday
        let sat = NaiveDate::from_ymd_opt(2016, 6, 4).unwrap();
        let fri = NaiveDate::from_ymd_opt(2016, 6, 3).unwrap();
        assert_eq!(m.futures.last_quote_on_or_before(sat, Commodity::Gas, 1).unwrap(), m.spot_on(fri).unwrap()[1] * maturity_factor(&m.config, 1));
    }

    #[test]
    fn supply_stack_orders_by_cost() {
        let cfg = SyntheticConfig::default();
        let stack = supply_stack(&cfg, 25.0, 25.0, 90.0);
        assert_eq!(stack.len(), 15);
        let price = merit_order_price(1.0, &stack).unwrap();
        let min = stack.iter().map(|b| b.marginal_cost).fold(f64::INFINITY, f64::min);
        assert_eq!(price, min);
    }
}
