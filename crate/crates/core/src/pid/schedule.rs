use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub const SECONDS_PER_DAY: u32 = 86_400;

#[derive(Debug, Error, PartialEq)]
#[error("invalid time of day {0:?}, expected HH:MM or HH:MM:SS")]
pub struct TimeOfDayError(pub String);

/// Seconds since local midnight, always `< 86400`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct TimeOfDay(u32);

impl TimeOfDay {
    pub const MIDNIGHT: TimeOfDay = TimeOfDay(0);

    pub fn from_seconds(secs: u64) -> Self {
        TimeOfDay((secs % u64::from(SECONDS_PER_DAY)) as u32)
    }

    pub fn hm(hour: u32, minute: u32) -> Self {
        Self::from_seconds(u64::from(hour * 3600 + minute * 60))
    }

    pub fn seconds(self) -> u32 {
        self.0
    }

    /// The time of day `secs` seconds later, wrapping at midnight.
    pub fn plus(self, secs: u64) -> Self {
        Self::from_seconds(u64::from(self.0) + secs)
    }
}

impl FromStr for TimeOfDay {
    type Err = TimeOfDayError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || TimeOfDayError(s.to_string());
        let parts: Vec<&str> = s.split(':').collect();
        if !(2..=3).contains(&parts.len()) {
            return Err(err());
        }
        let nums = parts
            .iter()
            .map(|p| p.parse::<u32>().map_err(|_| err()))
            .collect::<Result<Vec<_>, _>>()?;
        let (h, m, sec) = (nums[0], nums[1], nums.get(2).copied().unwrap_or(0));
        if h > 23 || m > 59 || sec > 59 {
            return Err(err());
        }
        Ok(TimeOfDay(h * 3600 + m * 60 + sec))
    }
}

impl fmt::Display for TimeOfDay {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (h, m, s) = (self.0 / 3600, self.0 / 60 % 60, self.0 % 60);
        if s == 0 {
            write!(f, "{h:02}:{m:02}")
        } else {
            write!(f, "{h:02}:{m:02}:{s:02}")
        }
    }
}

impl Serialize for TimeOfDay {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TimeOfDay {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Day,
    Night,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Day => "day",
            Mode::Night => "night",
        })
    }
}

/// Day/night setpoint program.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SetpointSchedule {
    pub day_start: TimeOfDay,
    pub night_start: TimeOfDay,
    pub day_setpoint_c: f64,
    pub night_setpoint_c: f64,
}

impl Default for SetpointSchedule {
    fn default() -> Self {
        Self {
            day_start: TimeOfDay::hm(8, 0),
            night_start: TimeOfDay::hm(20, 0),
            day_setpoint_c: 15.0,
            night_setpoint_c: 20.0,
        }
    }
}

impl SetpointSchedule {
    pub fn validate(&self, t_min_c: f64, t_max_c: f64) -> Result<(), String> {
        if self.day_start == self.night_start {
            return Err("day_start and night_start must differ".into());
        }
        for (name, v) in [
            ("day_setpoint_c", self.day_setpoint_c),
            ("night_setpoint_c", self.night_setpoint_c),
        ] {
            if !(v >= t_min_c && v <= t_max_c) {
                return Err(format!("{name} = {v} outside [{t_min_c}, {t_max_c}]"));
            }
        }
        Ok(())
    }

    /// Day when `t` lies in `[day_start, night_start)`, wrapping at midnight.
    pub fn mode_at(&self, t: TimeOfDay) -> Mode {
        let (d, n, t) = (self.day_start, self.night_start, t);
        let in_day = if d < n { d <= t && t < n } else { t >= d || t < n };
        if in_day {
            Mode::Day
        } else {
            Mode::Night
        }
    }

    pub fn setpoint(&self, mode: Mode) -> f64 {
        match mode {
            Mode::Day => self.day_setpoint_c,
            Mode::Night => self.night_setpoint_c,
        }
    }
}

pub fn schedule_setpoint(schedule: &SetpointSchedule, time_of_day: TimeOfDay) -> f64 {
    schedule.setpoint(schedule.mode_at(time_of_day))
}
