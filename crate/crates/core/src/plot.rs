//! Plot-ready data and static SVG renderings of runner CSVs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Figure {
    Lines {
        x_label: String,
        series: Vec<Series>,
    },
    /// Boolean table, one row per configuration.
    Heatmap {
        rows: Vec<String>,
        columns: Vec<String>,
        cells: Vec<Vec<bool>>,
    },
}

fn unknown(why: &str) -> Error {
    Error::Config(format!("unknown CSV schema: {why}"))
}

fn parse_num(s: &str) -> Option<f64> {
    match s.trim() {
        "inf" | "+inf" => Some(f64::INFINITY),
        "-inf" => Some(f64::NEG_INFINITY),
        t => t.parse().ok(),
    }
}

/// Recognizes the layout of a runner CSV.
pub fn parse_figure(text: &str) -> Result<Figure> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let records: Vec<Vec<String>> = rdr
        .records()
        .map(|r| r.map(|r| r.iter().map(str::to_string).collect()))
        .collect::<std::result::Result<_, _>>()?;
    if header.iter().all(|h| h.is_empty()) || records.is_empty() {
        return Err(Error::InvalidParameter("empty CSV".into()));
    }
    if header[0] == "config" && header.len() > 1 && header[1..].iter().all(|h| h.starts_with('k')) {
        let cells = records
            .iter()
            .map(|r| {
                r[1..]
                    .iter()
                    .map(|v| match v.as_str() {
                        "1" => Ok(true),
                        "0" => Ok(false),
                        _ => Err(unknown("occurrence cells must be 0 or 1")),
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        return Ok(Figure::Heatmap {
            rows: records.iter().map(|r| r[0].clone()).collect(),
            columns: header[1..].to_vec(),
            cells,
        });
    }
    if header == ["feature", "threshold", "sensitivity", "specificity"] {
        let mut series: Vec<Series> = Vec::new();
        for r in &records {
            let (sens, spec) = (parse_num(&r[2]), parse_num(&r[3]));
            let (Some(sens), Some(spec)) = (sens, spec) else {
                return Err(unknown("non-numeric ROC row"));
            };
            if series.last().map(|s| s.name != r[0]).unwrap_or(true) {
                series.push(Series { name: r[0].clone(), points: Vec::new() });
            }
            series.last_mut().unwrap().points.push((1.0 - spec, sens));
        }
        return Ok(Figure::Lines {
            x_label: "1 - specificity".into(),
            series,
        });
    }
    let numeric = |j: usize| {
        records
            .iter()
            .all(|r| r.get(j).is_some_and(|v| v.trim().is_empty() || parse_num(v).is_some()))
    };
    let x_numeric = records.iter().all(|r| parse_num(&r[0]).is_some());
    let series: Vec<Series> = (1..header.len())
        .filter(|&j| numeric(j))
        .map(|j| Series {
            name: header[j].clone(),
            points: records
                .iter()
                .enumerate()
                .filter_map(|(i, r)| {
                    let x = if x_numeric { parse_num(&r[0])? } else { i as f64 };
                    parse_num(&r[j]).map(|y| (x, y))
                })
                .collect(),
        })
        .collect();
    if series.is_empty() {
        return Err(unknown("no numeric columns"));
    }
    Ok(Figure::Lines {
        x_label: if x_numeric { header[0].clone() } else { "row".into() },
        series,
    })
}

/// Whitespace-separated columns with a `#` header. Series sharing their
/// abscissae go in one table; otherwise each series is its own block.
pub fn to_dat(fig: &Figure) -> String {
    let mut s = String::new();
    match fig {
        Figure::Heatmap { rows, columns, cells } => {
            let _ = writeln!(s, "# rows: {}", rows.join(" "));
            let _ = writeln!(s, "# columns: {}", columns.len());
            for r in cells {
                let line: Vec<&str> = r.iter().map(|&b| if b { "1" } else { "0" }).collect();
                let _ = writeln!(s, "{}", line.join(" "));
            }
        }
        Figure::Lines { x_label, series } => {
            let xs: Vec<f64> = series[0].points.iter().map(|p| p.0).collect();
            let shared = series
                .iter()
                .all(|sr| sr.points.len() == xs.len() && sr.points.iter().zip(&xs).all(|(p, x)| p.0 == *x));
            if shared {
                let names: Vec<&str> = series.iter().map(|sr| sr.name.as_str()).collect();
                let _ = writeln!(s, "# {} {}", x_label, names.join(" "));
                for (i, x) in xs.iter().enumerate() {
                    let _ = write!(s, "{x}");
                    for sr in series {
                        let _ = write!(s, " {}", sr.points[i].1);
                    }
                    s.push('\n');
                }
            } else {
                for (k, sr) in series.iter().enumerate() {
                    if k > 0 {
                        s.push_str("\n\n");
                    }
                    let _ = writeln!(s, "# {} {}", x_label, sr.name);
                    for (x, y) in &sr.points {
                        let _ = writeln!(s, "{x} {y}");
                    }
                }
            }
        }
    }
    s
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: f64 = 50.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn to_svg(fig: &Figure) -> String {
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n"
    );
    let (pw, ph) = (W - 2.0 * MARGIN, H - 2.0 * MARGIN);
    match fig {
        Figure::Heatmap { rows, columns, cells } => {
            let cw = pw / columns.len().max(1) as f64;
            let rh = ph / rows.len() as f64;
            for (i, r) in cells.iter().enumerate() {
                for (j, &on) in r.iter().enumerate() {
                    if on {
                        let _ = writeln!(
                            s,
                            "<rect class=\"cell\" x=\"{:.3}\" y=\"{:.3}\" width=\"{:.3}\" height=\"{:.3}\" fill=\"black\"/>",
                            MARGIN + j as f64 * cw,
                            MARGIN + i as f64 * rh,
                            cw,
                            rh
                        );
                    }
                }
                let _ = writeln!(
                    s,
                    "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"9\" text-anchor=\"end\">{}</text>",
                    MARGIN - 4.0,
                    MARGIN + (i as f64 + 0.7) * rh,
                    escape(&rows[i])
                );
            }
            let _ = writeln!(
                s,
                "<rect x=\"{MARGIN}\" y=\"{MARGIN}\" width=\"{pw}\" height=\"{ph}\" fill=\"none\" stroke=\"gray\"/>"
            );
        }
        Figure::Lines { x_label, series } => {
            let finite = series
                .iter()
                .flat_map(|sr| sr.points.iter())
                .filter(|p| p.0.is_finite() && p.1.is_finite());
            let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
            for &(x, y) in finite {
                x0 = x0.min(x);
                x1 = x1.max(x);
                y0 = y0.min(y);
                y1 = y1.max(y);
            }
            if x0 > x1 {
                (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
            }
            if x1 == x0 {
                x1 = x0 + 1.0;
            }
            if y1 == y0 {
                y1 = y0 + 1.0;
            }
            let px = |x: f64| MARGIN + (x - x0) / (x1 - x0) * pw;
            let py = |y: f64| H - MARGIN - (y - y0) / (y1 - y0) * ph;
            let _ = writeln!(
                s,
                "<rect x=\"{MARGIN}\" y=\"{MARGIN}\" width=\"{pw}\" height=\"{ph}\" fill=\"none\" stroke=\"gray\"/>"
            );
            let _ = writeln!(
                s,
                "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"11\" text-anchor=\"middle\">{}</text>",
                W / 2.0,
                H - 12.0,
                escape(x_label)
            );
            for (v, label) in [(y0, y0), (y1, y1)] {
                let _ = writeln!(
                    s,
                    "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"9\" text-anchor=\"end\">{label:.3}</text>",
                    MARGIN - 4.0,
                    py(v) + 3.0
                );
            }
            for (k, sr) in series.iter().enumerate() {
                let pts: Vec<String> = sr
                    .points
                    .iter()
                    .filter(|p| p.0.is_finite() && p.1.is_finite())
                    .map(|&(x, y)| format!("{:.3},{:.3}", px(x), py(y)))
                    .collect();
                let color = PALETTE[k % PALETTE.len()];
                let _ = writeln!(
                    s,
                    "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>",
                    pts.join(" ")
                );
                let _ = writeln!(
                    s,
                    "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"10\" fill=\"{color}\">{}</text>",
                    W - MARGIN + 4.0,
                    MARGIN + 12.0 * (k as f64 + 1.0),
                    escape(&sr.name)
                );
            }
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `<stem>.dat` and `<stem>.svg` for the CSV at `csv` into `out_dir`.
pub fn emit_plot_data(csv: impl AsRef<Path>, out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let (csv, out_dir) = (csv.as_ref(), out_dir.as_ref());
    let text = fs::read_to_string(csv).map_err(|e| Error::io(csv, e))?;
    let fig = parse_figure(&text)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let stem = csv.file_stem().and_then(|s| s.to_str()).unwrap_or("plot");
    let mut written = Vec::new();
    for (ext, body) in [("dat", to_dat(&fig)), ("svg", to_svg(&fig))] {
        let path = out_dir.join(format!("{stem}.{ext}"));
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curves_become_nonincreasing_polylines() {
        let fig = parse_figure("p,a,b\n5,1.0,0.9\n50,0.6,0.5\n100,0.2,0.1\n").unwrap();
        let Figure::Lines { series, .. } = &fig else { panic!() };
        assert_eq!(series.len(), 2);
        let svg = to_svg(&fig);
        assert_eq!(svg.matches("<polyline").count(), 2);
        for line in svg.lines().filter(|l| l.starts_with("<polyline")) {
            let pts = line.split('"').nth(1).unwrap();
            let ys: Vec<f64> = pts.split(' ').map(|p| p.split(',').nth(1).unwrap().parse().unwrap()).collect();
            assert!(ys.windows(2).all(|w| w[1] >= w[0]), "svg y grows downward");
        }
        assert!(to_dat(&fig).starts_with("# p a b\n5 1 0.9\n"));
    }

    #[test]
    fn occurrence_becomes_heatmap() {
        let fig = parse_figure("config,k0,k1,k2\nn=3,1,0,1\nn=4,1,1,1\n").unwrap();
        let Figure::Heatmap { rows, .. } = &fig else { panic!() };
        assert_eq!(rows, &["n=3", "n=4"]);
        assert_eq!(to_svg(&fig).matches("class=\"cell\"").count(), 5);
    }

    #[test]
    fn roc_and_generic_layouts() {
        let fig = parse_figure("feature,threshold,sensitivity,specificity\na,1,1,0\na,2,0,1\nb,1,1,0\n").unwrap();
        let Figure::Lines { series, .. } = &fig else { panic!() };
        assert_eq!(series.len(), 2);
        assert_eq!(series[0].points, vec![(1.0, 1.0), (0.0, 0.0)]);
        let fig = parse_figure("config,new_rate,lost_rate\nn=3,,\nn=4,0.5,0.25\n").unwrap();
        let Figure::Lines { x_label, series } = &fig else { panic!() };
        assert_eq!(x_label, "row");
        assert_eq!(series[0].points, vec![(1.0, 0.5)]);
    }

    #[test]
    fn empty_and_unknown_are_errors() {
        assert!(parse_figure("").is_err());
        assert!(parse_figure("p,a\n").is_err());
        assert!(parse_figure("name,kind\nx,y\n").unwrap_err().is_config_error());
        assert!(parse_figure("config,k0\nx,2\n").is_err());
    }
}
