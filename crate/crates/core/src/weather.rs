//! Daily weather series: seeded synthetic generation, CSV load/store, slicing.
//!
//! The synthetic generator is a stand-in for station data: temperature rides a
//! day-of-year sinusoid with bounded uniform noise, rainfall follows a
//! first-order wet/dry chain with exponential wet-day amounts, and solar
//! radiation is a clear-sky sinusoid damped on wet days. All outputs are
//! quantized to 2 decimal places so the CSV round trip is lossless.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One day of weather forcing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeatherDay {
    /// Solar radiation, MJ/m^2/day.
    pub srad: f64,
    /// Daily maximum temperature, deg C.
    pub tmax: f64,
    /// Daily minimum temperature, deg C.
    pub tmin: f64,
    /// Rainfall, mm/day.
    pub rain: f64,
}

impl WeatherDay {
    fn validate(&self) -> std::result::Result<(), String> {
        if self.tmin > self.tmax {
            return Err(format!("tmin {} > tmax {}", self.tmin, self.tmax));
        }
        if self.srad < 0.0 {
            return Err(format!("negative srad {}", self.srad));
        }
        if self.rain < 0.0 {
            return Err(format!("negative rain {}", self.rain));
        }
        Ok(())
    }
}

/// An ordered run of daily weather starting at a given day of year.
#[derive(Debug, Clone, PartialEq)]
pub struct WeatherSeries {
    start_day_of_year: u16,
    days: Vec<WeatherDay>,
}

impl WeatherSeries {
    /// Builds a series, validating every day and the start day of year (1-366).
    pub fn new(start_day_of_year: u16, days: Vec<WeatherDay>) -> Result<Self> {
        if !(1..=366).contains(&start_day_of_year) {
            return Err(Error::invalid_argument(format!(
                "start_day_of_year {start_day_of_year} outside 1..=366"
            )));
        }
        for (i, day) in days.iter().enumerate() {
            day.validate()
                .map_err(|msg| Error::invalid_argument(format!("day {i}: {msg}")))?;
        }
        Ok(WeatherSeries {
            start_day_of_year,
            days,
        })
    }

    pub fn start_day_of_year(&self) -> u16 {
        self.start_day_of_year
    }

    pub fn len(&self) -> usize {
        self.days.len()
    }

    pub fn is_empty(&self) -> bool {
        self.days.is_empty()
    }

    pub fn day(&self, index: usize) -> &WeatherDay {
        &self.days[index]
    }

    pub fn days(&self) -> &[WeatherDay] {
        &self.days
    }

    /// Day of year for the i-th entry, wrapping at 365.
    pub fn day_of_year(&self, index: usize) -> u16 {
        ((self.start_day_of_year as usize - 1 + index) % 365 + 1) as u16
    }

    /// Contiguous sub-series of `len` days starting at `start`.
    pub fn slice(&self, start: usize, len: usize) -> Result<WeatherSeries> {
        if len == 0 {
            return Err(Error::invalid_argument("slice length must be >= 1"));
        }
        let end = start
            .checked_add(len)
            .ok_or_else(|| Error::invalid_argument("slice range overflows"))?;
        if end > self.days.len() {
            return Err(Error::invalid_argument(format!(
                "slice {start}..{end} out of range for series of {} days",
                self.days.len()
            )));
        }
        Ok(WeatherSeries {
            start_day_of_year: self.day_of_year(start),
            days: self.days[start..end].to_vec(),
        })
    }
}

/// Parameters of the synthetic weather generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClimateParams {
    /// Mean annual temperature, deg C.
    pub mean_temp_c: f64,
    /// Seasonal (annual sinusoid) temperature amplitude, deg C.
    pub seasonal_amplitude_c: f64,
    /// Mean diurnal range (tmax - tmin), deg C.
    pub diurnal_range_c: f64,
    /// Probability a day after a dry day is wet.
    pub wet_day_prob: f64,
    /// Probability a day after a wet day stays wet.
    pub wet_persist_prob: f64,
    /// Mean rainfall on wet days, mm.
    pub mean_wet_rain_mm: f64,
    /// Clear-sky solar radiation peak, MJ/m^2/day.
    pub srad_peak: f64,
    /// Day of year of the first generated day.
    pub start_day_of_year: u16,
}

impl Default for ClimateParams {
    /// Loosely northern-Florida-like subtropical defaults.
    fn default() -> Self {
        ClimateParams {
            mean_temp_c: 22.0,
            seasonal_amplitude_c: 6.0,
            diurnal_range_c: 10.0,
            wet_day_prob: 0.25,
            wet_persist_prob: 0.45,
            mean_wet_rain_mm: 9.0,
            srad_peak: 22.0,
            start_day_of_year: 60,
        }
    }
}

impl ClimateParams {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("wet_day_prob", self.wet_day_prob),
            ("wet_persist_prob", self.wet_persist_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid_argument(format!("{name} {p} outside [0, 1]")));
            }
        }
        for (name, v) in [
            ("seasonal_amplitude_c", self.seasonal_amplitude_c),
            ("diurnal_range_c", self.diurnal_range_c),
            ("mean_wet_rain_mm", self.mean_wet_rain_mm),
            ("srad_peak", self.srad_peak),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid_argument(format!(
                    "{name} {v} must be finite and >= 0"
                )));
            }
        }
        if !self.mean_temp_c.is_finite() {
            return Err(Error::invalid_argument("mean_temp_c must be finite"));
        }
        if !(1..=366).contains(&self.start_day_of_year) {
            return Err(Error::invalid_argument(format!(
                "start_day_of_year {} outside 1..=366",
                self.start_day_of_year
            )));
        }
        Ok(())
    }
}

/// Seasonal phase shared by temperature and radiation: peaks near midsummer.
fn seasonal(doy: u16) -> f64 {
    (2.0 * std::f64::consts::PI * (doy as f64 - 100.0) / 365.0).sin()
}

fn quantize(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Generates `n_days` of synthetic weather, deterministic per seed.
pub fn generate_synthetic(seed: u64, n_days: usize, params: &ClimateParams) -> Result<WeatherSeries> {
    if n_days == 0 {
        return Err(Error::invalid_argument("n_days must be >= 1"));
    }
    params.validate()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut days = Vec::with_capacity(n_days);
    let mut wet_yesterday = false;
    for i in 0..n_days {
        let doy = ((params.start_day_of_year as usize - 1 + i) % 365 + 1) as u16;
        let tavg = params.mean_temp_c + params.seasonal_amplitude_c * seasonal(doy);
        let hi = tavg + params.diurnal_range_c / 2.0 + rng.random_range(-2.0..2.0);
        let lo = tavg - params.diurnal_range_c / 2.0 + rng.random_range(-2.0..2.0);

        let p_wet = if wet_yesterday {
            params.wet_persist_prob
        } else {
            params.wet_day_prob
        };
        let wet = rng.random::<f64>() < p_wet;
        let rain = if wet {
            // Inverse-CDF exponential draw; 1-u avoids ln(0).
            -params.mean_wet_rain_mm * (1.0 - rng.random::<f64>()).ln()
        } else {
            0.0
        };
        wet_yesterday = wet;

        let clear = params.srad_peak * (0.75 + 0.25 * seasonal(doy));
        let srad = if wet { 0.4 * clear } else { clear };

        days.push(WeatherDay {
            srad: quantize(srad),
            tmax: quantize(hi.max(lo)),
            tmin: quantize(hi.min(lo)),
            rain: quantize(rain),
        });
    }
    WeatherSeries::new(params.start_day_of_year, days)
}

const CSV_HEADER: &str = "day,srad,tmax,tmin,rain";

/// Renders a series in the weather CSV format (2 decimal places).
pub fn weather_to_csv(series: &WeatherSeries) -> String {
    let mut out = String::with_capacity(32 * (series.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for (i, day) in series.days().iter().enumerate() {
        let _ = writeln!(
            out,
            "{},{:.2},{:.2},{:.2},{:.2}",
            series.day_of_year(i),
            day.srad,
            day.tmax,
            day.tmin,
            day.rain
        );
    }
    out
}

/// Writes the weather CSV to `path`.
pub fn write_weather_csv(series: &WeatherSeries, path: &Path) -> Result<()> {
    std::fs::write(path, weather_to_csv(series))?;
    Ok(())
}

/// Loads a weather CSV; errors carry 1-based line numbers.
pub fn load_weather_csv(path: &Path) -> Result<WeatherSeries> {
    let text = std::fs::read_to_string(path)?;
    parse_weather_csv(&text)
}

/// Parses the weather CSV format from a string.
pub fn parse_weather_csv(text: &str) -> Result<WeatherSeries> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(1, "empty file, expected header"))?;
    if header.trim() != CSV_HEADER {
        return Err(Error::parse(
            1,
            format!("expected header `{CSV_HEADER}`, got `{}`", header.trim()),
        ));
    }

    let mut start_doy: Option<u16> = None;
    let mut days = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::parse(
                line_no,
                format!("expected 5 fields, got {}", fields.len()),
            ));
        }
        let doy: u16 = fields[0]
            .trim()
            .parse()
            .map_err(|_| Error::parse(line_no, format!("bad day `{}`", fields[0])))?;
        let mut nums = [0f64; 4];
        for (slot, field) in nums.iter_mut().zip(&fields[1..]) {
            *slot = field
                .trim()
                .parse()
                .map_err(|_| Error::parse(line_no, format!("bad number `{field}`")))?;
        }
        let day = WeatherDay {
            srad: nums[0],
            tmax: nums[1],
            tmin: nums[2],
            rain: nums[3],
        };
        day.validate().map_err(|msg| Error::parse(line_no, msg))?;

        match start_doy {
            None => {
                if !(1..=366).contains(&doy) {
                    return Err(Error::parse(line_no, format!("day {doy} outside 1..=366")));
                }
                start_doy = Some(doy);
            }
            Some(start) => {
                let expected = ((start as usize - 1 + days.len()) % 365 + 1) as u16;
                if doy != expected {
                    return Err(Error::parse(
                        line_no,
                        format!("day {doy} out of sequence, expected {expected}"),
                    ));
                }
            }
        }
        days.push(day);
    }

    let start = start_doy.ok_or_else(|| Error::parse(2, "no data rows"))?;
    WeatherSeries::new(start, days)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let p = ClimateParams::default();
        let a = generate_synthetic(7, 160, &p).unwrap();
        let b = generate_synthetic(7, 160, &p).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_days_rejected() {
        assert!(generate_synthetic(7, 0, &ClimateParams::default()).is_err());
    }

    #[test]
    fn invariants_hold_across_seeds() {
        let p = ClimateParams::default();
        for seed in 0..50 {
            let s = generate_synthetic(seed, 200, &p).unwrap();
            for day in s.days() {
                assert!(day.tmin <= day.tmax, "seed {seed}");
                assert!(day.srad >= 0.0 && day.rain >= 0.0, "seed {seed}");
            }
        }
    }

    #[test]
    fn wet_fraction_matches_chain_probability() {
        // With persistence equal to the wet-day probability the chain is iid,
        // so the long-run wet fraction is the wet-day probability itself.
        let p = ClimateParams {
            wet_day_prob: 0.3,
            wet_persist_prob: 0.3,
            ..ClimateParams::default()
        };
        let s = generate_synthetic(7, 100_000, &p).unwrap();
        let wet = s.days().iter().filter(|d| d.rain > 0.0).count();
        let frac = wet as f64 / s.len() as f64;
        assert!((frac - 0.3).abs() < 0.01, "wet fraction {frac}");
    }

    #[test]
    fn csv_round_trip_is_lossless() {
        let p = ClimateParams::default();
        let s = generate_synthetic(11, 180, &p).unwrap();
        let text = weather_to_csv(&s);
        let loaded = parse_weather_csv(&text).unwrap();
        assert_eq!(s, loaded);
    }

    #[test]
    fn small_valid_file_parses() {
        let text = "day,srad,tmax,tmin,rain\n60,18.00,25.00,15.00,0.00\n61,7.20,24.00,16.50,12.30\n62,18.10,26.00,15.00,0.00\n";
        let s = parse_weather_csv(text).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.start_day_of_year(), 60);
        assert_eq!(s.day(1).rain, 12.3);
    }

    #[test]
    fn negative_rain_names_line() {
        let text = "day,srad,tmax,tmin,rain\n60,18.00,25.00,15.00,0.00\n61,18.00,25.00,15.00,-1.00\n";
        match parse_weather_csv(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn inverted_temperatures_rejected() {
        let text = "day,srad,tmax,tmin,rain\n60,18.00,15.00,25.00,0.00\n";
        assert!(matches!(
            parse_weather_csv(text),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_weather_csv(Path::new("/nonexistent/weather.csv")).unwrap_err();
        assert!(matches!(err, Error::Io(_)));
    }

    #[test]
    fn slice_identity() {
        let s = generate_synthetic(3, 40, &ClimateParams::default()).unwrap();
        assert_eq!(s.slice(0, s.len()).unwrap(), s);
    }

    #[test]
    fn slice_zero_length_rejected() {
        let s = generate_synthetic(3, 40, &ClimateParams::default()).unwrap();
        assert!(s.slice(0, 0).is_err());
        assert!(s.slice(30, 20).is_err());
    }

    #[test]
    fn slice_composition() {
        let s = generate_synthetic(3, 60, &ClimateParams::default()).unwrap();
        let inner = s.slice(10, 40).unwrap().slice(5, 20).unwrap();
        assert_eq!(inner, s.slice(15, 20).unwrap());
    }

    #[test]
    fn day_of_year_wraps() {
        let s = WeatherSeries::new(
            364,
            vec![
                WeatherDay {
                    srad: 10.0,
                    tmax: 20.0,
                    tmin: 10.0,
                    rain: 0.0,
                };
                4
            ],
        )
        .unwrap();
        assert_eq!(s.day_of_year(0), 364);
        assert_eq!(s.day_of_year(1), 365);
        assert_eq!(s.day_of_year(2), 1);
        assert_eq!(s.day_of_year(3), 2);
    }
}
