//! CSV formats.
//!
//! Drive logs have the header `t,a_meas,f_res`. Profiles have the header
//! `k,t,u,a,v,d` with `k` counting from 1 and `t = k ts`. Floats are written
//! in the shortest form that reads back to the same value.

use std::io::{Read, Write};

use massdesign::dynamics::{Profile, SamplingGrid};
use massdesign::estimator::DriveLog;

use crate::CliError;

pub const DRIVE_LOG_HEADER: [&str; 3] = ["t", "a_meas", "f_res"];
pub const PROFILE_HEADER: [&str; 6] = ["k", "t", "u", "a", "v", "d"];

fn parse_err(line: u64, message: impl Into<String>) -> CliError {
    CliError::Parse {
        line: Some(line as usize),
        message: message.into(),
    }
}

fn csv_err(e: csv::Error) -> CliError {
    let line = e.position().map(|p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::Io(io.to_string()),
        kind => CliError::Parse {
            line,
            message: format!("{kind:?}"),
        },
    }
}

/// Rows of numbers under an exact header. The header itself is line 1.
fn read_table<R: Read>(input: R, header: &[&str]) -> Result<Vec<Vec<f64>>, CliError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(input);
    let found = rdr.headers().map_err(csv_err)?.clone();
    if found.iter().ne(header.iter().copied()) {
        return Err(parse_err(
            1,
            format!("expected header {:?}, found {:?}", header.join(","), found.iter().collect::<Vec<_>>().join(",")),
        ));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(0, |p| p.line());
        let mut row = Vec::with_capacity(header.len());
        for (field, name) in rec.iter().zip(header) {
            let x: f64 = field
                .parse()
                .map_err(|_| parse_err(line, format!("column {name}: {field:?} is not a number")))?;
            if !x.is_finite() {
                return Err(parse_err(line, format!("column {name}: value must be finite")));
            }
            row.push(x);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(parse_err(2, "no data rows"));
    }
    Ok(rows)
}

pub fn read_drive_log<R: Read>(input: R) -> Result<DriveLog, CliError> {
    let rows = read_table(input, &DRIVE_LOG_HEADER)?;
    let col = |j: usize| rows.iter().map(|r| r[j]).collect::<Vec<_>>();
    DriveLog::new(col(0), col(1), col(2)).map_err(|e| CliError::Parse {
        line: None,
        message: e.to_string(),
    })
}

pub fn write_drive_log<W: Write>(out: W, log: &DriveLog) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(DRIVE_LOG_HEADER).map_err(csv_err)?;
    for k in 0..log.len() {
        w.write_record([log.t[k], log.a_meas[k], log.f_res[k]].map(|x| x.to_string()))
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| CliError::Io(e.to_string()))
}

pub fn write_profile<W: Write>(out: W, profile: &Profile) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(PROFILE_HEADER).map_err(csv_err)?;
    for i in 0..profile.len() {
        let k = i + 1;
        let row = [
            k.to_string(),
            profile.grid.time(k).to_string(),
            profile.u[i].to_string(),
            profile.a[i].to_string(),
            profile.v[i].to_string(),
            profile.d[i].to_string(),
        ];
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| CliError::Io(e.to_string()))
}

/// Read a profile back. The sample time is taken from the time column and
/// the initial velocity from the first row (`v0 = v_1 - ts a_1`); all
/// columns are kept exactly as written.
pub fn read_profile<R: Read>(input: R) -> Result<Profile, CliError> {
    let rows = read_table(input, &PROFILE_HEADER)?;
    for (i, r) in rows.iter().enumerate() {
        if r[0] != (i + 1) as f64 {
            return Err(parse_err(i as u64 + 2, format!("expected k = {}, found {}", i + 1, r[0])));
        }
    }
    let n = rows.len();
    let ts = rows[0][1];
    let grid = SamplingGrid::new(ts, n).map_err(|e| parse_err(2, e.to_string()))?;
    let col = |j: usize| rows.iter().map(|r| r[j]).collect::<Vec<_>>();
    Ok(Profile {
        grid,
        u: col(2),
        a: col(3),
        v: col(4),
        d: col(5),
        v0: rows[0][4] - ts * rows[0][3],
    })
}
