//! CSV and JSON artifacts. Every float is written with 12 significant
//! digits; infinities are written as `inf` in CSV and as `null` in JSON.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::closed_loop::{ClosedLoopRecord, WindupComparison};
use crate::equilibrium::EquilibriumMap;
use crate::error::{Error, Result};
use crate::gain_synthesis::GainCertificate;
use crate::numeric::{format_sig, round_sig, SIG_DIGITS};
use crate::roa::XtSample;
use crate::stability_cert::EvidenceRecord;

pub fn fmt(x: f64) -> String {
    format_sig(x, SIG_DIGITS)
}

fn parse_f64(field: &str) -> Result<f64> {
    match field {
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        "nan" => Ok(f64::NAN),
        _ => field
            .parse()
            .map_err(|_| Error::Config(format!("io: '{field}' is not a number"))),
    }
}

fn parse_bool(field: &str) -> Result<bool> {
    match field {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!("io: '{field}' is not a boolean"))),
    }
}

fn numbered(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (1..=n).map(move |i| format!("{prefix}{i}"))
}

/// Creates the file and its parent directories.
pub fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().has_headers(true).from_reader(r)
}

fn check_header<R: Read>(rdr: &mut csv::Reader<R>, expected: &[String]) -> Result<()> {
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != expected {
        return Err(Error::Config(format!(
            "io: unexpected CSV header {header:?}, expected {expected:?}"
        )));
    }
    Ok(())
}

pub fn trajectory_header(n: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend(numbered("x", n));
    h.extend(["u", "y", "eta", "V"].map(String::from));
    h.extend(numbered("xi", n));
    h.push("wcoord".into());
    h
}

/// Columns `t,x1..xn,u,y,eta,V,xi1..xin,wcoord`.
pub fn write_trajectory_csv<W: Write>(out: W, records: &[ClosedLoopRecord]) -> Result<()> {
    let n = records.first().map_or(0, |r| r.x.len());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(trajectory_header(n))?;
    for rec in records {
        let mut row = vec![fmt(rec.t)];
        row.extend(rec.x.iter().map(|&v| fmt(v)));
        row.extend([rec.u, rec.y, rec.eta, rec.v].map(fmt));
        row.extend(rec.xi.iter().map(|&v| fmt(v)));
        row.push(fmt(rec.w_coord));
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trajectory_csv<R: Read>(input: R) -> Result<Vec<ClosedLoopRecord>> {
    let mut rdr = reader(input);
    let width = rdr.headers()?.len();
    if width < 7 || (width - 6) % 2 != 0 {
        return Err(Error::Config(format!("io: trajectory CSV has {width} columns")));
    }
    let n = (width - 6) / 2;
    check_header(&mut rdr, &trajectory_header(n))?;
    rdr.records()
        .map(|row| {
            let v: Vec<f64> = row?.iter().map(parse_f64).collect::<Result<_>>()?;
            Ok(ClosedLoopRecord {
                t: v[0],
                x: v[1..1 + n].to_vec(),
                u: v[1 + n],
                y: v[2 + n],
                eta: v[3 + n],
                v: v[4 + n],
                xi: v[5 + n..5 + 2 * n].to_vec(),
                w_coord: v[5 + 2 * n],
            })
        })
        .collect()
}

/// Rows `u, Ξ₁..Ξₙ, G` of the equilibrium map.
#[derive(Debug, Clone, PartialEq)]
pub struct MapRow {
    pub u: f64,
    pub xi: Vec<f64>,
    pub g: f64,
}

pub fn map_header(n: usize) -> Vec<String> {
    let mut h = vec!["u".to_string()];
    h.extend(numbered("xi", n));
    h.push("G".into());
    h
}

pub fn write_map_csv<W: Write>(out: W, map: &EquilibriumMap) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(map_header(map.n()))?;
    for ((u, xi), g) in map.u_grid.iter().zip(&map.xi_values).zip(&map.g_values) {
        let mut row = vec![fmt(*u)];
        row.extend(xi.iter().map(|&v| fmt(v)));
        row.push(fmt(*g));
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_map_csv<R: Read>(input: R) -> Result<Vec<MapRow>> {
    let mut rdr = reader(input);
    let width = rdr.headers()?.len();
    if width < 3 {
        return Err(Error::Config(format!("io: map CSV has {width} columns")));
    }
    check_header(&mut rdr, &map_header(width - 2))?;
    rdr.records()
        .map(|row| {
            let v: Vec<f64> = row?.iter().map(parse_f64).collect::<Result<_>>()?;
            Ok(MapRow {
                u: v[0],
                xi: v[1..width - 1].to_vec(),
                g: v[width - 1],
            })
        })
        .collect()
}

const EVIDENCE_HEADER: [&str; 3] = ["u0", "abscissa", "worst_ratio"];

/// Columns `u0,abscissa,worst_ratio`; the ratio is empty for unprobed nodes.
pub fn write_evidence_csv<W: Write>(out: W, evidence: &[EvidenceRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(EVIDENCE_HEADER)?;
    for e in evidence {
        w.write_record([fmt(e.u0), fmt(e.abscissa), e.worst_ratio.map(fmt).unwrap_or_default()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_evidence_csv<R: Read>(input: R) -> Result<Vec<EvidenceRecord>> {
    let mut rdr = reader(input);
    check_header(&mut rdr, &EVIDENCE_HEADER.map(String::from))?;
    rdr.records()
        .map(|row| {
            let row = row?;
            Ok(EvidenceRecord {
                u0: parse_f64(&row[0])?,
                abscissa: parse_f64(&row[1])?,
                worst_ratio: if row[2].is_empty() { None } else { Some(parse_f64(&row[2])?) },
            })
        })
        .collect()
}

pub fn roa_header(n: usize) -> Vec<String> {
    let mut h: Vec<String> = numbered("x", n).collect();
    h.extend(["u0", "in_XT", "converged", "settle_time"].map(String::from));
    h
}

/// Columns `x1..xn,u0,in_XT,converged,settle_time`. `converged` is empty
/// for samples that were not tested.
pub fn write_roa_csv<W: Write>(out: W, samples: &[XtSample]) -> Result<()> {
    let n = samples.first().map_or(0, |s| s.x0.len());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(roa_header(n))?;
    for s in samples {
        let mut row: Vec<String> = s.x0.iter().map(|&v| fmt(v)).collect();
        row.push(fmt(s.u0));
        row.push(s.in_xt.to_string());
        row.push(s.converged.map(|c| c.to_string()).unwrap_or_default());
        row.push(fmt(s.settle_time));
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_roa_csv<R: Read>(input: R) -> Result<Vec<XtSample>> {
    let mut rdr = reader(input);
    let width = rdr.headers()?.len();
    if width < 5 {
        return Err(Error::Config(format!("io: roa CSV has {width} columns")));
    }
    let n = width - 4;
    check_header(&mut rdr, &roa_header(n))?;
    rdr.records()
        .map(|row| {
            let row = row?;
            Ok(XtSample {
                x0: (0..n).map(|i| parse_f64(&row[i])).collect::<Result<_>>()?,
                u0: parse_f64(&row[n])?,
                in_xt: parse_bool(&row[n + 1])?,
                converged: if row[n + 2].is_empty() { None } else { Some(parse_bool(&row[n + 2])?) },
                settle_time: parse_f64(&row[n + 3])?,
            })
        })
        .collect()
}

pub const WINDUP_HEADER: [&str; 6] = ["t", "y_sat", "u_sat", "y_clamp", "u_clamp", "v_clamp"];

/// Columns `t,y_sat,u_sat,y_clamp,u_clamp,v_clamp` (both runs share the
/// sampling grid).
pub fn write_windup_csv<W: Write>(out: W, cmp: &WindupComparison) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(WINDUP_HEADER)?;
    for (a, b) in cmp.saturating.trace.iter().zip(&cmp.clamped.trace) {
        w.write_record([a.t, a.y, a.u, b.y, b.u, b.state].map(fmt))?;
    }
    w.flush()?;
    Ok(())
}

/// Rows of the windup CSV as `[t, y_sat, u_sat, y_clamp, u_clamp, v_clamp]`.
pub fn read_windup_csv<R: Read>(input: R) -> Result<Vec<[f64; 6]>> {
    let mut rdr = reader(input);
    check_header(&mut rdr, &WINDUP_HEADER.map(String::from))?;
    rdr.records()
        .map(|row| {
            let row = row?;
            let mut out = [0.0; 6];
            for (o, f) in out.iter_mut().zip(row.iter()) {
                *o = parse_f64(f)?;
            }
            Ok(out)
        })
        .collect()
}

/// The constants table, in display order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstantsTable {
    pub m: f64,
    pub lambda: f64,
    pub eps0: f64,
    #[serde(rename = "L1")]
    pub l1: f64,
    #[serde(rename = "L2")]
    pub l2: f64,
    pub delta_g: f64,
    pub alpha: f64,
    pub mu: f64,
    #[serde(rename = "T")]
    pub t: f64,
    pub kappa: f64,
    pub lambda_tilde: f64,
    pub k_max: f64,
}

impl From<&GainCertificate> for ConstantsTable {
    fn from(g: &GainCertificate) -> Self {
        Self {
            m: g.m,
            lambda: g.lambda,
            eps0: g.eps0,
            l1: g.l1,
            l2: g.l2,
            delta_g: g.delta_g,
            alpha: g.alpha,
            mu: g.mu,
            t: g.t,
            kappa: g.kappa,
            lambda_tilde: g.lambda_tilde,
            k_max: g.k_max,
        }
    }
}

impl ConstantsTable {
    /// Plain-text table, one `name = value` line per constant.
    pub fn render(&self) -> String {
        let rows = [
            ("m", self.m),
            ("lambda", self.lambda),
            ("eps0", self.eps0),
            ("L1", self.l1),
            ("L2", self.l2),
            ("delta_g", self.delta_g),
            ("alpha", self.alpha),
            ("mu", self.mu),
            ("T", self.t),
            ("kappa", self.kappa),
            ("lambda_tilde", self.lambda_tilde),
            ("k_max", self.k_max),
        ];
        rows.iter().map(|(k, v)| format!("{k:>12} = {}\n", fmt(*v))).collect()
    }
}

fn round_value(v: &mut Value) {
    match v {
        Value::Number(num) => {
            if let Some(x) = num.as_f64().filter(|_| num.is_f64()) {
                if let Some(r) = serde_json::Number::from_f64(round_sig(x, SIG_DIGITS)) {
                    *num = r;
                }
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_value),
        Value::Object(map) => map.values_mut().for_each(round_value),
        _ => {}
    }
}

/// Pretty JSON with every float rounded to 12 significant digits.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut v = serde_json::to_value(value)?;
    round_value(&mut v);
    let mut s = serde_json::to_string_pretty(&v)?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = create(path)?;
    f.write_all(to_json(value)?.as_bytes())?;
    f.flush()?;
    Ok(())
}

pub fn read_json_value(path: &Path) -> Result<Value> {
    Ok(serde_json::from_reader(std::io::BufReader::new(File::open(path)?))?)
}

/// Writes a CSV artifact through `body`.
pub fn write_csv_file(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let mut f = create(path)?;
    body(&mut f)?;
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::closed_loop::{simulate_closed_loop, ClosedLoopConfig};
    use crate::equilibrium::build_map;
    use crate::plant::builtin;
    use crate::sat_integrator::SaturatorSpec;

    #[test]
    fn trajectory_round_trip() {
        let p = builtin("osc_cubic").unwrap();
        let spec = SaturatorSpec::new(-1.0, 1.0).unwrap();
        let map = build_map(&p, &spec, 51).unwrap();
        let mut cfg = ClosedLoopConfig::new(p, spec, 0.3, 0.5, vec![0.1, -0.2], 0.0, 1.0);
        cfg.record_every = 100;
        let recs = simulate_closed_loop(&cfg, &map).unwrap();
        let mut buf = Vec::new();
        write_trajectory_csv(&mut buf, &recs).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,x1,x2,u,y,eta,V,xi1,xi2,wcoord\n"));
        let back = read_trajectory_csv(&buf[..]).unwrap();
        assert_eq!(back.len(), recs.len());
        for (a, b) in recs.iter().zip(&back) {
            assert_eq!(round_sig(a.y, 12), b.y);
            assert_eq!(b.x.len(), 2);
        }
        let mut buf2 = Vec::new();
        write_trajectory_csv(&mut buf2, &back).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn roa_round_trip_with_sentinels() {
        let samples = vec![
            XtSample {
                x0: vec![1.0, 2.5],
                u0: -0.25,
                in_xt: true,
                converged: Some(true),
                settle_time: 12.125,
            },
            XtSample {
                x0: vec![0.0, 1e-20],
                u0: 1.0,
                in_xt: false,
                converged: None,
                settle_time: f64::INFINITY,
            },
        ];
        let mut buf = Vec::new();
        write_roa_csv(&mut buf, &samples).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x1,x2,u0,in_XT,converged,settle_time\n"));
        assert!(text.contains(",false,,inf"));
        assert_eq!(read_roa_csv(&buf[..]).unwrap(), samples);
    }

    #[test]
    fn evidence_and_map_round_trip() {
        let ev = vec![
            EvidenceRecord {
                u0: 0.5,
                abscissa: -1.0,
                worst_ratio: Some(1.25),
            },
            EvidenceRecord {
                u0: 0.75,
                abscissa: -0.9,
                worst_ratio: None,
            },
        ];
        let mut buf = Vec::new();
        write_evidence_csv(&mut buf, &ev).unwrap();
        assert_eq!(read_evidence_csv(&buf[..]).unwrap(), ev);

        let p = builtin("linear1d").unwrap();
        let map = build_map(&p, &SaturatorSpec::new(-1.0, 1.0).unwrap(), 5).unwrap();
        let mut buf = Vec::new();
        write_map_csv(&mut buf, &map).unwrap();
        let rows = read_map_csv(&buf[..]).unwrap();
        assert_eq!(rows.len(), 5);
        assert_eq!(rows[4].g, 1.0);
    }

    #[test]
    fn bad_header_rejected() {
        assert!(read_roa_csv("a,b,c,d,e\n1,2,3,4,5\n".as_bytes()).is_err());
        assert!(read_trajectory_csv("t,x1\n0,1\n".as_bytes()).is_err());
    }

    #[test]
    fn json_rounds_floats() {
        #[derive(Serialize)]
        struct S {
            a: f64,
            b: Vec<f64>,
            c: usize,
            d: f64,
        }
        let s = to_json(&S {
            a: 1.0 / 3.0,
            b: vec![2.0f64.sqrt()],
            c: 7,
            d: f64::INFINITY,
        })
        .unwrap();
        assert!(s.contains("\"a\": 0.333333333333,"), "{s}");
        assert!(s.contains("1.41421356237"));
        assert!(s.contains("\"c\": 7"));
        assert!(s.contains("\"d\": null"));
    }

    #[test]
    fn constants_table_keys() {
        let t = ConstantsTable {
            m: 1.0,
            lambda: 1.0,
            eps0: 1.0,
            l1: 1.0,
            l2: 1.0,
            delta_g: 1.0,
            alpha: 1.0,
            mu: 0.5,
            t: 12f64.ln(),
            kappa: 3e-3,
            lambda_tilde: 7.0 / 3.0,
            k_max: 8e-4,
        };
        let v: Value = serde_json::from_str(&to_json(&t).unwrap()).unwrap();
        let keys: Vec<&String> = v.as_object().unwrap().keys().collect();
        for k in ["m", "lambda", "eps0", "L1", "L2", "delta_g", "alpha", "mu", "T", "kappa", "lambda_tilde", "k_max"] {
            assert!(keys.iter().any(|x| *x == k), "{k}");
        }
        assert!(t.render().contains("T = 2.48490664979"));
    }
}
