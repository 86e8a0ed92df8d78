//! Keypoints and the keypoint CSV schema.

use std::cmp::Ordering;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RejectReason {
    SingularHessian,
    NotConverged,
    OutsideDomain,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Discrete,
    Refined,
    Rejected(RejectReason),
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Discrete => "discrete",
            Status::Refined => "refined",
            Status::Rejected(_) => "rejected",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Features {
    pub dog_abs: f64,
    pub laplacian3d: f64,
    pub hessian_cond: f64,
    pub min_neighbor_gap: f64,
}

/// A DoG extremum. `(octave, scale, m, n)` is the grid node (row `m`,
/// column `n`); `sigma`, `x`, `y` are in input-pixel units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub octave: usize,
    pub scale: usize,
    pub m: usize,
    pub n: usize,
    pub sigma: f64,
    pub x: f64,
    pub y: f64,
    /// Offset `(scale, row, column)` of the accepted quadratic fit.
    pub alpha: [f64; 3],
    pub dog_value: f64,
    pub features: Features,
    pub status: Status,
}

impl Keypoint {
    /// Canonical order: octave, scale, row, column, then refined coordinates.
    pub fn canonical_cmp(&self, other: &Self) -> Ordering {
        (self.octave, self.scale, self.m, self.n)
            .cmp(&(other.octave, other.scale, other.m, other.n))
            .then(self.sigma.total_cmp(&other.sigma))
            .then(self.y.total_cmp(&other.y))
            .then(self.x.total_cmp(&other.x))
    }

    /// Same keypoint with position and scale replaced.
    pub fn with_coords(mut self, x: f64, y: f64, sigma: f64) -> Self {
        self.x = x;
        self.y = y;
        self.sigma = sigma;
        self
    }
}

pub fn sort_canonical(kps: &mut [Keypoint]) {
    kps.sort_by(Keypoint::canonical_cmp);
}

pub const CSV_HEADER: [&str; 16] = [
    "o",
    "s",
    "m",
    "n",
    "sigma",
    "x",
    "y",
    "alpha1",
    "alpha2",
    "alpha3",
    "dog_value",
    "dog_abs",
    "laplacian3d",
    "hessian_cond",
    "min_neighbor_gap",
    "status",
];

/// Nine significant digits, scientific notation.
pub fn fmt_sig9(v: f64) -> String {
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    format!("{v:.8e}")
}

pub fn write_keypoints_csv<W: Write>(out: W, kps: &[Keypoint]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(CSV_HEADER)?;
    for k in kps {
        let f = &k.features;
        let mut rec = vec![
            k.octave.to_string(),
            k.scale.to_string(),
            k.m.to_string(),
            k.n.to_string(),
        ];
        rec.extend(
            [
                k.sigma,
                k.x,
                k.y,
                k.alpha[0],
                k.alpha[1],
                k.alpha[2],
                k.dog_value,
                f.dog_abs,
                f.laplacian3d,
                f.hessian_cond,
                f.min_neighbor_gap,
            ]
            .iter()
            .map(|&v| fmt_sig9(v)),
        );
        rec.push(k.status.to_string());
        wtr.write_record(&rec)?;
    }
    wtr.flush().map_err(|e| Error::Csv(e.into()))
}

fn parse<T: FromStr>(rec: &csv::StringRecord, i: usize) -> Result<T> {
    let raw = rec.get(i).unwrap_or("");
    raw.trim()
        .parse()
        .map_err(|_| Error::Config(format!("keypoint CSV: bad value {raw:?} in column {}", CSV_HEADER[i])))
}

pub fn read_keypoints_csv<R: Read>(input: R) -> Result<Vec<Keypoint>> {
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(Error::Config("keypoint CSV: unexpected header".into()));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let status = match rec.get(15).unwrap_or("") {
            "discrete" => Status::Discrete,
            "refined" => Status::Refined,
            "rejected" => Status::Rejected(RejectReason::NotConverged),
            other => return Err(Error::Config(format!("keypoint CSV: bad status {other:?}"))),
        };
        out.push(Keypoint {
            octave: parse(&rec, 0)?,
            scale: parse(&rec, 1)?,
            m: parse(&rec, 2)?,
            n: parse(&rec, 3)?,
            sigma: parse(&rec, 4)?,
            x: parse(&rec, 5)?,
            y: parse(&rec, 6)?,
            alpha: [parse(&rec, 7)?, parse(&rec, 8)?, parse(&rec, 9)?],
            dog_value: parse(&rec, 10)?,
            features: Features {
                dog_abs: parse(&rec, 11)?,
                laplacian3d: parse(&rec, 12)?,
                hessian_cond: parse(&rec, 13)?,
                min_neighbor_gap: parse(&rec, 14)?,
            },
            status,
        });
    }
    Ok(out)
}

#[cfg(test)]
pub(crate) fn test_keypoint(x: f64, y: f64, sigma: f64) -> Keypoint {
    Keypoint {
        octave: 0,
        scale: 1,
        m: y.round().max(0.0) as usize,
        n: x.round().max(0.0) as usize,
        sigma,
        x,
        y,
        alpha: [0.0; 3],
        dog_value: 0.0,
        features: Features::default(),
        status: Status::Refined,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_keeps_nine_digits() {
        let mut k = test_keypoint(12.345678912, 3.25, 1.1);
        k.features.hessian_cond = f64::INFINITY;
        k.dog_value = -0.0123456789;
        let mut buf = Vec::new();
        write_keypoints_csv(&mut buf, &[k]).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("o,s,m,n,sigma,x,y,alpha1,alpha2,alpha3,dog_value,dog_abs,laplacian3d,hessian_cond,min_neighbor_gap,status"));
        assert!(text.contains("1.23456789e1"));
        let back = read_keypoints_csv(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 1);
        assert!((back[0].x - k.x).abs() < 1e-7);
        assert_eq!(back[0].features.hessian_cond, f64::INFINITY);
        assert_eq!(back[0].status, Status::Refined);
    }

    #[test]
    fn bad_header_is_rejected() {
        assert!(read_keypoints_csv("a,b\n1,2\n".as_bytes()).is_err());
    }
}
