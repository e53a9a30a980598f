//! Rewrites calendar dates in task instructions so they stay in the future.
//! Benchmark corpora age: "book a flight for March 15, 2024" stops being
//! bookable once that date passes. Shifting keeps the task meaningful without
//! changing anything else about it.

use std::sync::OnceLock;

use chrono::{Datelike, NaiveDate};
use regex::{Captures, Regex};

const MONTHS: [&str; 12] = [
    "January",
    "February",
    "March",
    "April",
    "May",
    "June",
    "July",
    "August",
    "September",
    "October",
    "November",
    "December",
];

fn month_number(name: &str) -> Option<u32> {
    MONTHS.iter().position(|m| *m == name).map(|i| i as u32 + 1)
}

fn month_alternation() -> String {
    MONTHS.join("|")
}

fn iso_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\b(\d{4})-(\d{2})-(\d{2})\b").unwrap())
}

fn month_day_year_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(&format!(r"\b({}) (\d{{1,2}}), (\d{{4}})\b", month_alternation())).unwrap()
    })
}

fn day_month_year_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(&format!(r"\b(\d{{1,2}}) ({}) (\d{{4}})\b", month_alternation())).unwrap()
    })
}

/// Moves a past-or-present date forward by whole years until it is strictly
/// after `today`, preserving month and day. February 29 skips non-leap years.
fn shift_forward(date: NaiveDate, today: NaiveDate) -> NaiveDate {
    if date > today {
        return date;
    }
    let mut year = date.year();
    loop {
        year += 1;
        if let Some(candidate) = NaiveDate::from_ymd_opt(year, date.month(), date.day()) {
            if candidate > today {
                return candidate;
            }
        }
    }
}

fn rewrite(
    text: &str,
    pattern: &Regex,
    today: NaiveDate,
    parse: impl Fn(&Captures) -> Option<(i32, u32, u32)>,
    format: impl Fn(&Captures, NaiveDate) -> String,
) -> String {
    pattern
        .replace_all(text, |caps: &Captures| {
            let original = caps[0].to_string();
            let Some((year, month, day)) = parse(caps) else {
                return original;
            };
            let Some(date) = NaiveDate::from_ymd_opt(year, month, day) else {
                return original;
            };
            if date > today {
                return original;
            }
            let shifted = shift_forward(date, today);
            log::debug!("shifted date {original:?} to {}", shifted);
            format(caps, shifted)
        })
        .into_owned()
}

/// Rewrites every absolute calendar date in `text` that is on or before
/// `today`, adding whole years until the date is strictly in the future.
///
/// Three formats are recognized: ISO `YYYY-MM-DD`, `Month D, YYYY`, and
/// `D Month YYYY` (full English month names). Each rewrite keeps the format
/// and the original day spelling. Relative phrases ("next Tuesday"), dates
/// already in the future, impossible dates ("2024-02-30"), and anything in an
/// unrecognized format pass through unchanged.
pub fn shift_dates(text: &str, today: NaiveDate) -> String {
    let text = rewrite(
        text,
        iso_pattern(),
        today,
        |caps| {
            Some((caps[1].parse().ok()?, caps[2].parse().ok()?, caps[3].parse().ok()?))
        },
        |_, date| format!("{:04}-{:02}-{:02}", date.year(), date.month(), date.day()),
    );
    let text = rewrite(
        &text,
        month_day_year_pattern(),
        today,
        |caps| Some((caps[3].parse().ok()?, month_number(&caps[1])?, caps[2].parse().ok()?)),
        |caps, date| format!("{} {}, {}", &caps[1], &caps[2], date.year()),
    );
    rewrite(
        &text,
        day_month_year_pattern(),
        today,
        |caps| Some((caps[3].parse().ok()?, month_number(&caps[2])?, caps[1].parse().ok()?)),
        |caps, date| format!("{} {} {}", &caps[1], &caps[2], date.year()),
    )
}
