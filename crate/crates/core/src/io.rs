//! CSV readers and writers. Headers are mandatory and must match exactly;
//! every value must be a finite number.
//!
//! Numbers are written with Rust's shortest round-trip formatting, so reading
//! back a written file reproduces the values bit for bit.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::navigation::{Attitude, ImuSample, PositionFix};
use crate::sim::{DcMotorData, TruthSample};

pub const IMU_HEADER: [&str; 7] = ["t", "ax", "ay", "az", "roll", "pitch", "heading"];
pub const FIXES_HEADER: [&str; 7] = ["t", "x", "y", "z", "sd_x", "sd_y", "sd_z"];
pub const DC_MOTOR_HEADER: [&str; 6] = ["t", "c", "y", "x1", "x2", "outlier"];
pub const NAV_TRUTH_HEADER: [&str; 10] = ["t", "x", "y", "z", "vx", "vy", "vz", "ax", "ay", "az"];

/// Header plus numeric rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

/// Reads a numeric CSV. Rows must all have the header's width.
pub fn read_table<R: Read>(reader: R) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    if header.is_empty() || header.iter().all(|h| h.is_empty()) {
        return Err(Error::Data("missing CSV header".into()));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let row = rec
            .iter()
            .enumerate()
            .map(|(j, field)| {
                let v: f64 = field
                    .parse()
                    .map_err(|_| Error::Data(format!("line {line}, column {:?}: {field:?} is not a number", header[j])))?;
                if !v.is_finite() {
                    return Err(Error::Data(format!("line {line}, column {:?}: non-finite value", header[j])));
                }
                Ok(v)
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(Table { header, rows })
}

fn expect_header(table: &Table, expected: &[&str], what: &str) -> Result<()> {
    if table.header.iter().map(String::as_str).ne(expected.iter().copied()) {
        return Err(Error::Data(format!(
            "{what} CSV header must be {:?}, found {:?}",
            expected.join(","),
            table.header.join(",")
        )));
    }
    Ok(())
}

pub fn parse_imu_csv<R: Read>(reader: R) -> Result<Vec<ImuSample>> {
    let table = read_table(reader)?;
    expect_header(&table, &IMU_HEADER, "IMU")?;
    Ok(table
        .rows
        .iter()
        .map(|r| ImuSample {
            t: r[0],
            accel_body: [r[1], r[2], r[3]],
            attitude: Attitude {
                roll: r[4],
                pitch: r[5],
                heading: r[6],
            },
        })
        .collect())
}

pub fn parse_fixes_csv<R: Read>(reader: R) -> Result<Vec<PositionFix>> {
    let table = read_table(reader)?;
    expect_header(&table, &FIXES_HEADER, "position fix")?;
    Ok(table
        .rows
        .iter()
        .map(|r| PositionFix {
            t: r[0],
            xyz: [r[1], r[2], r[3]],
            sd: [r[4], r[5], r[6]],
        })
        .collect())
}

/// Accepts either `t,c,y` or the full simulated layout with truth columns.
/// Without truth columns, `truth` and `outliers` come back empty.
pub fn parse_dc_motor_csv<R: Read>(reader: R) -> Result<DcMotorData> {
    let table = read_table(reader)?;
    let full = table.header.len() == DC_MOTOR_HEADER.len();
    if full {
        expect_header(&table, &DC_MOTOR_HEADER, "dc motor")?;
    } else {
        expect_header(&table, &DC_MOTOR_HEADER[..3], "dc motor")?;
    }
    let mut d = DcMotorData {
        t: Vec::new(),
        input: Vec::new(),
        y: Vec::new(),
        truth: Vec::new(),
        outliers: Vec::new(),
    };
    for (i, r) in table.rows.iter().enumerate() {
        d.t.push(r[0]);
        d.input.push(r[1]);
        d.y.push(r[2]);
        if full {
            d.truth.push([r[3], r[4]]);
            let flag = r[5];
            if flag != 0.0 && flag != 1.0 {
                return Err(Error::Data(format!("line {}: outlier flag must be 0 or 1, got {flag}", i + 2)));
            }
            d.outliers.push(flag == 1.0);
        }
    }
    Ok(d)
}

pub fn parse_nav_truth_csv<R: Read>(reader: R) -> Result<Vec<TruthSample>> {
    let table = read_table(reader)?;
    expect_header(&table, &NAV_TRUTH_HEADER, "navigation truth")?;
    Ok(table
        .rows
        .iter()
        .map(|r| TruthSample {
            t: r[0],
            position: [r[1], r[2], r[3]],
            velocity: [r[4], r[5], r[6]],
            acceleration: [r[7], r[8], r[9]],
        })
        .collect())
}

/// Measurements for a custom model: `t, y1, …, ym`. Returns times and rows.
pub fn parse_measurements_csv<R: Read>(reader: R, meas_dim: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let table = read_table(reader)?;
    let mut expected = vec!["t".to_string()];
    expected.extend((1..=meas_dim).map(|i| format!("y{i}")));
    let expected: Vec<&str> = expected.iter().map(String::as_str).collect();
    expect_header(&table, &expected, "measurement")?;
    let t = table.rows.iter().map(|r| r[0]).collect();
    let y = table.rows.into_iter().map(|r| r[1..].to_vec()).collect();
    Ok((t, y))
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

pub fn read_imu_csv(path: &Path) -> Result<Vec<ImuSample>> {
    parse_imu_csv(open(path)?)
}

pub fn read_fixes_csv(path: &Path) -> Result<Vec<PositionFix>> {
    parse_fixes_csv(open(path)?)
}

pub fn read_dc_motor_csv(path: &Path) -> Result<DcMotorData> {
    parse_dc_motor_csv(open(path)?)
}

pub fn read_nav_truth_csv(path: &Path) -> Result<Vec<TruthSample>> {
    parse_nav_truth_csv(open(path)?)
}

pub fn read_measurements_csv(path: &Path, meas_dim: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    parse_measurements_csv(open(path)?, meas_dim)
}

/// Writes a numeric table to any sink.
pub fn write_table_to<W: Write>(sink: W, header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(header)?;
    for row in rows {
        if row.len() != header.len() {
            return Err(Error::dim("CSV row width", header.len(), row.len()));
        }
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

pub fn write_table(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_table_to(std::io::BufWriter::new(file), header, rows)
}

pub fn imu_rows(imu: &[ImuSample]) -> impl Iterator<Item = Vec<f64>> + '_ {
    imu.iter().map(|s| {
        let a = s.accel_body;
        vec![s.t, a[0], a[1], a[2], s.attitude.roll, s.attitude.pitch, s.attitude.heading]
    })
}

pub fn fix_rows(fixes: &[PositionFix]) -> impl Iterator<Item = Vec<f64>> + '_ {
    fixes
        .iter()
        .map(|f| vec![f.t, f.xyz[0], f.xyz[1], f.xyz[2], f.sd[0], f.sd[1], f.sd[2]])
}

pub fn nav_truth_rows(truth: &[TruthSample]) -> impl Iterator<Item = Vec<f64>> + '_ {
    truth.iter().map(|s| {
        let mut r = vec![s.t];
        r.extend(s.position);
        r.extend(s.velocity);
        r.extend(s.acceleration);
        r
    })
}

/// Full layout when truth is present, otherwise `t,c,y`.
pub fn write_dc_motor_csv(path: &Path, d: &DcMotorData) -> Result<()> {
    if d.truth.len() == d.t.len() && d.outliers.len() == d.t.len() {
        let rows = (0..d.t.len()).map(|k| {
            vec![
                d.t[k],
                d.input[k],
                d.y[k],
                d.truth[k][0],
                d.truth[k][1],
                if d.outliers[k] { 1.0 } else { 0.0 },
            ]
        });
        write_table(path, &DC_MOTOR_HEADER, rows)
    } else {
        let rows = (0..d.t.len()).map(|k| vec![d.t[k], d.input[k], d.y[k]]);
        write_table(path, &DC_MOTOR_HEADER[..3], rows)
    }
}

pub fn write_imu_csv(path: &Path, imu: &[ImuSample]) -> Result<()> {
    write_table(path, &IMU_HEADER, imu_rows(imu))
}

pub fn write_fixes_csv(path: &Path, fixes: &[PositionFix]) -> Result<()> {
    write_table(path, &FIXES_HEADER, fix_rows(fixes))
}

pub fn write_nav_truth_csv(path: &Path, truth: &[TruthSample]) -> Result<()> {
    write_table(path, &NAV_TRUTH_HEADER, nav_truth_rows(truth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{simulate_dc_motor, simulate_mooring, DcMotorParams, MooringParams};

    #[test]
    fn nav_round_trip_is_exact() {
        let p = MooringParams {
            duration: 40.0,
            ..MooringParams::default()
        };
        let d = simulate_mooring(&p, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (a, b, c) = (dir.path().join("imu.csv"), dir.path().join("fixes.csv"), dir.path().join("truth.csv"));
        write_imu_csv(&a, &d.imu).unwrap();
        write_fixes_csv(&b, &d.fixes).unwrap();
        write_nav_truth_csv(&c, &d.truth).unwrap();
        assert_eq!(read_imu_csv(&a).unwrap(), d.imu);
        assert_eq!(read_fixes_csv(&b).unwrap(), d.fixes);
        assert_eq!(read_nav_truth_csv(&c).unwrap(), d.truth);
    }

    #[test]
    fn dc_motor_round_trip_with_and_without_truth() {
        let d = simulate_dc_motor(&DcMotorParams::default(), 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dc.csv");
        write_dc_motor_csv(&path, &d).unwrap();
        assert_eq!(read_dc_motor_csv(&path).unwrap(), d);

        let bare = DcMotorData {
            truth: vec![],
            outliers: vec![],
            ..d.clone()
        };
        write_dc_motor_csv(&path, &bare).unwrap();
        assert_eq!(read_dc_motor_csv(&path).unwrap(), bare);
    }

    #[test]
    fn header_and_value_errors() {
        let err = parse_imu_csv("t,ax,ay,az,roll,pitch\n0,0,0,0,0,0\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("header"), "{err}");
        let err = parse_fixes_csv("t,x,y,z,sd_x,sd_y,sd_z\n0,1,2,abc,1,1,1\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        assert!(parse_fixes_csv("t,x,y,z,sd_x,sd_y,sd_z\n0,1,2,NaN,1,1,1\n".as_bytes()).is_err());
        assert!(parse_fixes_csv("t,x,y,z,sd_x,sd_y,sd_z\n0,1,2\n".as_bytes()).is_err());
        assert!(parse_dc_motor_csv("t,c,y,x1,x2,outlier\n1,0,0,0,0,2\n".as_bytes()).is_err());
        assert!(parse_imu_csv("".as_bytes()).is_err());
    }

    #[test]
    fn measurements_header_follows_dimension() {
        let text = "t,y1,y2\n1,0.5,2\n2,1e-3,-4\n";
        let (t, y) = parse_measurements_csv(text.as_bytes(), 2).unwrap();
        assert_eq!(t, vec![1.0, 2.0]);
        assert_eq!(y[1], vec![1e-3, -4.0]);
        assert!(parse_measurements_csv(text.as_bytes(), 1).is_err());
    }

    #[test]
    fn whitespace_is_trimmed() {
        let fixes = parse_fixes_csv("t, x, y, z, sd_x, sd_y, sd_z\n 0, 1, 2, 3, 1, 1, 1\n".as_bytes()).unwrap();
        assert_eq!(fixes[0].xyz, [1.0, 2.0, 3.0]);
    }
}
