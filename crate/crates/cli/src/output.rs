//! Trajectory writers.
//!
//! CSV rows are `t,u_1,…,u_N,f` followed by `lambda_1,…,lambda_{N+1}` when
//! spectra are requested. Every scalar is printed with 17 significant digits,
//! enough to recover the exact 64-bit value.

use std::io::{self, Write};

use serde::Serialize;
use volterra_core::integrate::{Sample, TrajectoryRecord};

use crate::config::OutputFormat;

pub fn csv_header(sites: usize, spectra: bool) -> String {
    let mut cols = vec!["t".to_string()];
    cols.extend((1..=sites).map(|i| format!("u_{i}")));
    cols.push("f".into());
    if spectra {
        cols.extend((1..=sites + 1).map(|i| format!("lambda_{i}")));
    }
    cols.join(",")
}

/// 17 significant digits in scientific notation.
pub fn format_scalar(x: f64) -> String {
    format!("{x:.16e}")
}

fn csv_row(sample: &Sample, spectra: bool) -> String {
    let mut fields = Vec::with_capacity(2 * sample.u.len() + 3);
    fields.push(format_scalar(sample.t));
    fields.extend(sample.u.iter().map(|&v| format_scalar(v)));
    fields.push(format_scalar(sample.f));
    if spectra {
        fields.extend(sample.spectrum.iter().map(|&v| format_scalar(v)));
    }
    fields.join(",")
}

#[derive(Serialize)]
struct JsonSample<'a> {
    t: f64,
    u: &'a [f64],
    f: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda: Option<&'a [f64]>,
}

pub fn write_trajectory<W: Write>(
    out: &mut W,
    record: &TrajectoryRecord,
    format: OutputFormat,
    spectra: bool,
) -> io::Result<()> {
    match format {
        OutputFormat::Csv => {
            writeln!(out, "{}", csv_header(record.sites(), spectra))?;
            for sample in &record.samples {
                writeln!(out, "{}", csv_row(sample, spectra))?;
            }
        }
        OutputFormat::JsonLines => {
            for sample in &record.samples {
                let row = JsonSample {
                    t: sample.t,
                    u: &sample.u,
                    f: sample.f,
                    lambda: spectra.then_some(sample.spectrum.as_slice()),
                };
                serde_json::to_writer(&mut *out, &row)?;
                writeln!(out)?;
            }
        }
    }
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        assert_eq!(csv_header(2, false), "t,u_1,u_2,f");
        assert_eq!(csv_header(1, true), "t,u_1,f,lambda_1,lambda_2");
    }

    #[test]
    fn scalars_round_trip() {
        for x in [0.1, 1.0 / 3.0, -2.0f64.sqrt(), 6.02214076e23, 5e-324, 0.0] {
            let s = format_scalar(x);
            assert_eq!(s.parse::<f64>().unwrap(), x, "{s}");
        }
        assert_eq!(format_scalar(1.0), "1.0000000000000000e0");
    }
}
