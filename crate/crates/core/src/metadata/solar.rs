//! Sunrise/sunset approximation and the six sun-exposure day parts.
//!
//! Event times follow the classic almanac approximation (mean anomaly, true
//! longitude, right ascension, declination, local hour angle). Elevation of
//! the observer is ignored. Times are minutes after UTC midnight.

use chrono::{Datelike, NaiveDate};

const DEG: f64 = std::f64::consts::PI / 180.0;
const DAY_MINUTES: f64 = 1440.0;

/// Sun altitude ending night and dusk (9° below the horizon).
pub const TWILIGHT_ALTITUDE: f64 = -9.0;
/// Sun altitude ending dawn and starting dusk (4° above the horizon).
pub const DAYLIGHT_ALTITUDE: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SunEvents {
    /// Crossing times in minutes UTC, each in `[0, 1440)`.
    Times { rise: f64, set: f64 },
    /// The sun stays above the altitude all day.
    AllDayAbove,
    /// The sun never reaches the altitude.
    AllDayBelow,
}

enum Crossing {
    At(f64),
    Above,
    Below,
}

fn sin_d(x: f64) -> f64 {
    (x * DEG).sin()
}

fn cos_d(x: f64) -> f64 {
    (x * DEG).cos()
}

/// Right ascension (hours) and sine of the declination at almanac time `t`.
fn sun_position(t: f64) -> (f64, f64) {
    let mean_anomaly = 0.9856 * t - 3.289;
    let true_long = (mean_anomaly
        + 1.916 * sin_d(mean_anomaly)
        + 0.020 * sin_d(2.0 * mean_anomaly)
        + 282.634)
        .rem_euclid(360.0);
    let mut ra = ((0.91764 * (true_long * DEG).tan()).atan() / DEG).rem_euclid(360.0);
    // put RA in the same quadrant as the true longitude
    ra += (true_long / 90.0).floor() * 90.0 - (ra / 90.0).floor() * 90.0;
    (ra / 15.0, 0.39782 * sin_d(true_long))
}

fn crossing(day_of_year: f64, lat: f64, lon: f64, altitude: f64, rising: bool) -> Crossing {
    let lng_hour = lon / 15.0;
    let t = day_of_year + ((if rising { 6.0 } else { 18.0 }) - lng_hour) / 24.0;
    let (ra_hours, sin_dec) = sun_position(t);
    let cos_dec = sin_dec.asin().cos();
    let zenith = 90.0 - altitude;
    let num = cos_d(zenith) - sin_dec * sin_d(lat);
    let den = cos_dec * cos_d(lat);
    let cos_h = if den.abs() < 1e-12 {
        // at the pole: sign of the numerator decides
        if num > 0.0 {
            f64::INFINITY
        } else {
            f64::NEG_INFINITY
        }
    } else {
        num / den
    };
    if cos_h > 1.0 {
        return Crossing::Below;
    }
    if cos_h < -1.0 {
        return Crossing::Above;
    }
    let h = cos_h.acos() / DEG;
    let hour_angle = if rising { 360.0 - h } else { h } / 15.0;
    let local_mean = hour_angle + ra_hours - 0.06571 * t - 6.622;
    Crossing::At((local_mean - lng_hour).rem_euclid(24.0) * 60.0)
}

/// Times at which the sun's centre crosses `sun_altitude` degrees.
pub fn sun_event_times(lat: f64, lon: f64, date: NaiveDate, sun_altitude: f64) -> SunEvents {
    let n = f64::from(date.ordinal());
    match (
        crossing(n, lat, lon, sun_altitude, true),
        crossing(n, lat, lon, sun_altitude, false),
    ) {
        (Crossing::At(rise), Crossing::At(set)) => SunEvents::Times {
            rise: rise.rem_euclid(DAY_MINUTES),
            set: set.rem_euclid(DAY_MINUTES),
        },
        (Crossing::Above, _) | (_, Crossing::Above) => SunEvents::AllDayAbove,
        _ => SunEvents::AllDayBelow,
    }
}

/// Solar transit in minutes UTC, from the same almanac terms with a zero
/// hour angle.
fn transit_utc(lon: f64, date: NaiveDate) -> f64 {
    let lng_hour = lon / 15.0;
    let t = f64::from(date.ordinal()) + (12.0 - lng_hour) / 24.0;
    let (ra_hours, _) = sun_position(t);
    ((ra_hours - 0.06571 * t - 6.622 - lng_hour).rem_euclid(24.0)) * 60.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DayPart {
    Night1,
    Dawn,
    Forenoon,
    Afternoon,
    Dusk,
    Night2,
}

impl DayPart {
    pub const ALL: [DayPart; 6] = [
        DayPart::Night1,
        DayPart::Dawn,
        DayPart::Forenoon,
        DayPart::Afternoon,
        DayPart::Dusk,
        DayPart::Night2,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// `index / 5`.
    pub fn normalized(self) -> f64 {
        self.index() as f64 / 5.0
    }
}

/// Day-part boundaries in local minutes, non-decreasing and within
/// `[0, 1440]`. Parts are half-open: `[0, night_end)` is `Night1`,
/// `[night_end, dawn_end)` is `Dawn`, and so on up to `[dusk_end, 1440)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DayBoundaries {
    /// Sun rises through -9°.
    pub night_end: f64,
    /// Sun rises through +4°.
    pub dawn_end: f64,
    pub noon: f64,
    /// Sun sets through +4°.
    pub dusk_start: f64,
    /// Sun sets through -9°.
    pub dusk_end: f64,
}

impl DayBoundaries {
    pub fn cuts(&self) -> [f64; 5] {
        [self.night_end, self.dawn_end, self.noon, self.dusk_start, self.dusk_end]
    }

    /// The six `[start, end)` intervals in `DayPart` order.
    pub fn intervals(&self) -> [(DayPart, f64, f64); 6] {
        let c = self.cuts();
        let edges = [0.0, c[0], c[1], c[2], c[3], c[4], DAY_MINUTES];
        std::array::from_fn(|i| (DayPart::ALL[i], edges[i], edges[i + 1]))
    }

    pub fn classify(&self, minutes: f64) -> DayPart {
        let idx = self.cuts().iter().take_while(|&&c| minutes >= c).count();
        DayPart::ALL[idx]
    }
}

/// Whole-hour offset used as local civil time: `round(lon / 15)` hours.
pub fn local_offset_minutes(lon: f64) -> f64 {
    (lon / 15.0).round() * 60.0
}

/// Day-part boundaries for a place and date in approximate local time.
///
/// Noon is the midpoint of the +4° crossings, or the solar transit when
/// those do not exist. Events are unwrapped around noon; spans reaching past
/// midnight are clipped to the day and missing crossings collapse their
/// parts to empty intervals.
pub fn day_boundaries(lat: f64, lon: f64, date: NaiveDate) -> DayBoundaries {
    let offset = local_offset_minutes(lon);
    let day = sun_event_times(lat, lon, date, DAYLIGHT_ALTITUDE);
    let twilight = sun_event_times(lat, lon, date, TWILIGHT_ALTITUDE);

    let noon_utc = match day {
        SunEvents::Times { rise, set } => {
            let set = if set < rise { set + DAY_MINUTES } else { set };
            (rise + set) / 2.0
        }
        _ => transit_utc(lon, date),
    };
    let noon = (noon_utc + offset).rem_euclid(DAY_MINUTES);
    // local time of an event, taken within half a day of noon
    let around_noon = |utc: f64| {
        let d = (utc + offset - noon).rem_euclid(DAY_MINUTES);
        noon + if d > DAY_MINUTES / 2.0 { d - DAY_MINUTES } else { d }
    };
    let span = |ev: SunEvents| match ev {
        SunEvents::Times { rise, set } => {
            (around_noon(rise).min(noon), around_noon(set).max(noon))
        }
        SunEvents::AllDayAbove => (f64::NEG_INFINITY, f64::INFINITY),
        SunEvents::AllDayBelow => (noon, noon),
    };
    let (day_rise, day_set) = span(day);
    let (tw_rise, tw_set) = span(twilight);
    let clip = |x: f64| x.clamp(0.0, DAY_MINUTES);

    DayBoundaries {
        night_end: clip(tw_rise.min(day_rise)),
        dawn_end: clip(day_rise),
        noon: clip(noon),
        dusk_start: clip(day_set),
        dusk_end: clip(tw_set.max(day_set)),
    }
}

/// Day part for a local clock time (`minutes` after local midnight, local
/// time being UTC shifted by `round(lon / 15)` hours).
pub fn classify_day_part(lat: f64, lon: f64, date: NaiveDate, minutes: f64) -> DayPart {
    day_boundaries(lat, lon, date).classify(minutes.rem_euclid(DAY_MINUTES))
}
