//! IEEE Common Data Format reader and writer.
//!
//! Bus and branch cards are read by their fixed column positions. Only the
//! title, bus and branch sections are interpreted; loss zone, interchange and
//! tie-line sections are skipped.

use std::fmt::Write as _;

use super::{Branch, Bus, BusKind, NetworkCase};
use crate::error::{Error, Result};

/// Slice of `line` between 1-based inclusive columns, tolerant of short lines.
fn cols(line: &str, start: usize, end: usize) -> &str {
    let bytes = line.as_bytes();
    let s = (start - 1).min(bytes.len());
    let e = end.min(bytes.len());
    std::str::from_utf8(&bytes[s..e]).unwrap_or("").trim()
}

struct Card<'a> {
    line: &'a str,
    lineno: usize,
}

impl<'a> Card<'a> {
    fn float(&self, start: usize, end: usize, what: &str) -> Result<f64> {
        let s = cols(self.line, start, end);
        if s.is_empty() {
            return Ok(0.0);
        }
        s.parse::<f64>().map_err(|_| Error::Parse {
            line: self.lineno,
            msg: format!("bad {what} '{s}' in columns {start}-{end}"),
        })
    }

    fn int(&self, start: usize, end: usize, what: &str) -> Result<u32> {
        let s = cols(self.line, start, end);
        if s.is_empty() {
            return Ok(0);
        }
        // Some writers emit integer fields as "12.0".
        s.parse::<u32>()
            .or_else(|_| s.parse::<f64>().map(|v| v as u32))
            .map_err(|_| Error::Parse {
                line: self.lineno,
                msg: format!("bad {what} '{s}' in columns {start}-{end}"),
            })
    }

    fn required_int(&self, start: usize, end: usize, what: &str) -> Result<u32> {
        if cols(self.line, start, end).is_empty() {
            return Err(Error::Parse {
                line: self.lineno,
                msg: format!("missing {what} in columns {start}-{end}"),
            });
        }
        self.int(start, end, what)
    }
}

fn parse_bus(card: &Card) -> Result<Bus> {
    let id = card.required_int(1, 4, "bus number")?;
    let cdf_type = card.int(25, 26, "bus type")? as u8;
    let kind = match cdf_type {
        0 | 1 => BusKind::Pq,
        2 => BusKind::Pv,
        3 => BusKind::Slack,
        t => {
            return Err(Error::Parse {
                line: card.lineno,
                msg: format!("unknown bus type {t}"),
            })
        }
    };
    Ok(Bus {
        id,
        name: cols(card.line, 6, 17).to_string(),
        area: card.int(19, 20, "area")?,
        zone: card.int(21, 23, "zone")?,
        kind,
        cdf_type,
        v_final: card.float(28, 33, "final voltage")?,
        angle_final_deg: card.float(34, 40, "final angle")?,
        p_load: card.float(41, 49, "load MW")?,
        q_load: card.float(50, 59, "load MVAR")?,
        p_gen: card.float(60, 67, "generation MW")?,
        q_gen: card.float(68, 75, "generation MVAR")?,
        base_kv: card.float(77, 83, "base kV")?,
        v_setpoint: card.float(85, 90, "desired volts")?,
        q_max: card.float(91, 98, "max MVAR")?,
        q_min: card.float(99, 106, "min MVAR")?,
        shunt_g: card.float(107, 114, "shunt G")?,
        shunt_b: card.float(115, 122, "shunt B")?,
        remote_bus: card.int(124, 127, "remote bus")?,
        v_max: 1.05,
    })
}

fn parse_branch(card: &Card, base_mva: f64) -> Result<Branch> {
    let rating_mva = [
        card.float(51, 55, "rating 1")?,
        card.float(57, 61, "rating 2")?,
        card.float(63, 67, "rating 3")?,
    ];
    Ok(Branch {
        from_bus: card.required_int(1, 4, "tap bus")?,
        to_bus: card.required_int(6, 9, "z bus")?,
        area: card.int(11, 12, "area")?,
        zone: card.int(13, 14, "zone")?,
        circuit: card.int(17, 17, "circuit")?,
        cdf_type: card.int(19, 19, "branch type")? as u8,
        r: card.float(20, 29, "resistance")?,
        x: card.float(30, 40, "reactance")?,
        b_charging: card.float(41, 50, "line charging")?,
        rating_mva,
        control_bus: card.int(69, 72, "control bus")?,
        side: card.int(74, 74, "side")?,
        tap_ratio: card.float(77, 82, "turns ratio")?,
        shift_deg: card.float(84, 90, "phase shift")?,
        tap_min: card.float(91, 97, "min tap")?,
        tap_max: card.float(98, 104, "max tap")?,
        step: card.float(106, 111, "step")?,
        limit_min: card.float(113, 119, "min limit")?,
        limit_max: card.float(120, 126, "max limit")?,
        current_rating: if rating_mva[0] > 0.0 {
            rating_mva[0] / base_mva
        } else {
            f64::INFINITY
        },
    })
}

/// Parses an IEEE CDF file and validates the resulting case (single slack,
/// known branch endpoints, nonzero reactances, connectivity).
pub fn parse_cdf(text: &str) -> Result<NetworkCase> {
    let lines: Vec<&str> = text.lines().collect();
    let title_idx = lines
        .iter()
        .position(|l| !l.trim().is_empty())
        .ok_or(Error::Parse {
            line: 1,
            msg: "empty file".into(),
        })?;
    let title = Card {
        line: lines[title_idx],
        lineno: title_idx + 1,
    };
    let base_mva = title.float(32, 37, "MVA base")?;
    if !(base_mva > 0.0) {
        return Err(Error::Parse {
            line: title.lineno,
            msg: format!("MVA base {base_mva} must be positive"),
        });
    }

    let mut buses = Vec::new();
    let mut branches = Vec::new();
    let mut seen_bus = false;
    let mut seen_branch = false;
    let mut i = title_idx + 1;
    while i < lines.len() {
        let header = lines[i].trim_start();
        if header.starts_with("BUS DATA FOLLOWS") {
            seen_bus = true;
            i = read_section(&lines, i + 1, |card| {
                buses.push(parse_bus(card)?);
                Ok(())
            })?;
        } else if header.starts_with("BRANCH DATA FOLLOWS") {
            seen_branch = true;
            i = read_section(&lines, i + 1, |card| {
                branches.push(parse_branch(card, base_mva)?);
                Ok(())
            })?;
        } else if header.starts_with("END OF DATA") {
            break;
        } else {
            i += 1;
        }
    }
    if !seen_bus {
        return Err(Error::Parse {
            line: lines.len(),
            msg: "no BUS DATA section".into(),
        });
    }
    if !seen_branch {
        return Err(Error::Parse {
            line: lines.len(),
            msg: "no BRANCH DATA section".into(),
        });
    }

    let mut case = NetworkCase {
        title: cols(title.line, 46, 73).to_string(),
        date: cols(title.line, 2, 9).to_string(),
        originator: cols(title.line, 11, 30).to_string(),
        base_mva,
        year: title.int(39, 42, "year")?,
        season: cols(title.line, 44, 44).chars().next().unwrap_or(' '),
        buses,
        branches,
        index: Default::default(),
    };
    case.reindex()?;
    case.validate()?;
    case.validate_connectivity()?;
    log::debug!("parsed CDF case: {} buses, {} branches", case.buses.len(), case.branches.len());
    Ok(case)
}

/// Reads cards until a line starting with `-999` (or `-99`/`-9`). Returns the
/// index of the line after the terminator.
fn read_section<F>(lines: &[&str], start: usize, mut f: F) -> Result<usize>
where
    F: FnMut(&Card) -> Result<()>,
{
    let mut i = start;
    while i < lines.len() {
        let line = lines[i];
        if line.trim_start().starts_with("-9") {
            return Ok(i + 1);
        }
        if !line.trim().is_empty() {
            f(&Card { line, lineno: i + 1 })?;
        }
        i += 1;
    }
    Err(Error::Parse {
        line: lines.len(),
        msg: "section not terminated by -999".into(),
    })
}

/// Writes `value` right-aligned into 1-based columns [start, start + width).
fn put(buf: &mut Vec<u8>, start: usize, text: &str) {
    let end = start - 1 + text.len();
    if buf.len() < end {
        buf.resize(end, b' ');
    }
    buf[start - 1..end].copy_from_slice(text.as_bytes());
}

fn fixed(value: f64, width: usize, decimals: usize) -> String {
    let s = format!("{value:>width$.decimals$}");
    if s.len() > width {
        // Overflowing values keep their precision but eat leading spaces;
        // drop decimals until the field fits.
        for d in (0..decimals).rev() {
            let t = format!("{value:>width$.d$}");
            if t.len() <= width {
                return t;
            }
        }
    }
    s
}

/// Serializes a case in IEEE CDF fixed-column layout.
pub fn write_cdf(case: &NetworkCase) -> String {
    let mut out = String::new();
    let mut title = Vec::new();
    put(&mut title, 2, &format!("{:<8}", case.date));
    put(&mut title, 11, &format!("{:<20}", case.originator));
    put(&mut title, 32, &fixed(case.base_mva, 6, 1));
    put(&mut title, 39, &format!("{:>4}", case.year));
    put(&mut title, 44, &case.season.to_string());
    put(&mut title, 46, &case.title);
    out.push_str(String::from_utf8_lossy(&title).trim_end());
    out.push('\n');

    let _ = writeln!(out, "BUS DATA FOLLOWS                            {} ITEMS", case.buses.len());
    for b in &case.buses {
        let mut l = Vec::new();
        put(&mut l, 1, &format!("{:>4}", b.id));
        put(&mut l, 6, &format!("{:<12}", truncate(&b.name, 12)));
        put(&mut l, 19, &format!("{:>2}", b.area));
        put(&mut l, 21, &format!("{:>3}", b.zone));
        put(&mut l, 25, &format!("{:>2}", b.cdf_type));
        put(&mut l, 28, &fixed(b.v_final, 6, 4));
        put(&mut l, 34, &fixed(b.angle_final_deg, 7, 2));
        put(&mut l, 41, &fixed(b.p_load, 9, 2));
        put(&mut l, 50, &fixed(b.q_load, 10, 2));
        put(&mut l, 60, &fixed(b.p_gen, 8, 2));
        put(&mut l, 68, &fixed(b.q_gen, 8, 2));
        put(&mut l, 77, &fixed(b.base_kv, 7, 2));
        put(&mut l, 85, &fixed(b.v_setpoint, 6, 4));
        put(&mut l, 91, &fixed(b.q_max, 8, 2));
        put(&mut l, 99, &fixed(b.q_min, 8, 2));
        put(&mut l, 107, &fixed(b.shunt_g, 8, 4));
        put(&mut l, 115, &fixed(b.shunt_b, 8, 4));
        put(&mut l, 124, &format!("{:>4}", b.remote_bus));
        out.push_str(String::from_utf8_lossy(&l).trim_end());
        out.push('\n');
    }
    out.push_str("-999\n");

    let _ = writeln!(out, "BRANCH DATA FOLLOWS                         {} ITEMS", case.branches.len());
    for br in &case.branches {
        let mut l = Vec::new();
        put(&mut l, 1, &format!("{:>4}", br.from_bus));
        put(&mut l, 6, &format!("{:>4}", br.to_bus));
        put(&mut l, 11, &format!("{:>2}", br.area));
        put(&mut l, 13, &format!("{:>2}", br.zone));
        put(&mut l, 17, &format!("{:>1}", br.circuit % 10));
        put(&mut l, 19, &format!("{:>1}", br.cdf_type % 10));
        put(&mut l, 20, &fixed(br.r, 10, 6));
        put(&mut l, 30, &fixed(br.x, 11, 6));
        put(&mut l, 41, &fixed(br.b_charging, 9, 5));
        put(&mut l, 51, &format!("{:<5}", br.rating_mva[0].round() as i64));
        put(&mut l, 57, &format!("{:<5}", br.rating_mva[1].round() as i64));
        put(&mut l, 63, &format!("{:<5}", br.rating_mva[2].round() as i64));
        put(&mut l, 69, &format!("{:>4}", br.control_bus));
        put(&mut l, 74, &format!("{:>1}", br.side % 10));
        put(&mut l, 77, &fixed(br.tap_ratio, 6, 4));
        put(&mut l, 84, &fixed(br.shift_deg, 7, 2));
        put(&mut l, 91, &fixed(br.tap_min, 7, 4));
        put(&mut l, 98, &fixed(br.tap_max, 7, 4));
        put(&mut l, 106, &fixed(br.step, 6, 4));
        put(&mut l, 113, &fixed(br.limit_min, 7, 2));
        put(&mut l, 120, &fixed(br.limit_max, 7, 2));
        out.push_str(String::from_utf8_lossy(&l).trim_end());
        out.push('\n');
    }
    out.push_str("-999\n");
    out.push_str("LOSS ZONES FOLLOWS                     0 ITEMS\n-99\n");
    out.push_str("INTERCHANGE DATA FOLLOWS                 0 ITEMS\n-9\n");
    out.push_str("TIE LINES FOLLOWS                     0 ITEMS\n-999\n");
    out.push_str("END OF DATA\n");
    out
}

fn truncate(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}
