//! Text form of a [`PathRecord`]: one `#`-prefixed JSON header line followed by a
//! columnar CSV with columns `step, t, X0.., Z0.., chi, U0.., V0..`.
//!
//! Row `k` holds `X_{kδ}` and the noise that produced it; the noise columns of
//! row 0 are empty. Floats are written in shortest round-trip form, so a record
//! survives a write/read cycle bit-for-bit.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scheme::PathRecord;

pub const MAX_STEPS: usize = 1 << 24;
pub const MAX_DIM: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathHeader {
    pub delta: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub steps: usize,
    pub d: usize,
    pub n: usize,
    pub seed: u64,
    pub stream: u64,
    pub law_id: String,
    pub scheme_id: String,
}

impl PathHeader {
    pub fn of(path: &PathRecord) -> Self {
        Self {
            delta: path.delta,
            horizon: path.horizon(),
            steps: path.steps(),
            d: path.dim(),
            n: path.noise_dim(),
            seed: path.seed,
            stream: path.stream,
            law_id: path.law_id.clone(),
            scheme_id: path.scheme_id.clone(),
        }
    }

    pub fn columns(&self) -> Vec<String> {
        let mut c = vec!["step".to_string(), "t".to_string()];
        c.extend((0..self.d).map(|i| format!("X{i}")));
        c.extend((0..self.n).map(|i| format!("Z{i}")));
        c.push("chi".into());
        c.extend((0..self.n).map(|i| format!("U{i}")));
        c.extend((0..self.n).map(|i| format!("V{i}")));
        c
    }
}

pub fn write_path<W: Write>(path: &PathRecord, mut w: W) -> Result<()> {
    let header = PathHeader::of(path);
    let json = serde_json::to_string(&header).map_err(|e| Error::Invalid(e.to_string()))?;
    writeln!(w, "# {json}")?;
    let mut csv = csv::Writer::from_writer(w);
    let cols = header.columns();
    csv.write_record(&cols).map_err(csv_err)?;
    let mut row: Vec<String> = Vec::with_capacity(cols.len());
    for k in 0..=path.steps() {
        row.clear();
        row.push(k.to_string());
        row.push((k as f64 * path.delta).to_string());
        row.extend(path.states[k].iter().map(f64::to_string));
        if k == 0 {
            row.extend(std::iter::repeat_n(String::new(), 3 * header.n + 1));
        } else {
            let j = k - 1;
            row.extend(path.z[j].iter().map(f64::to_string));
            row.push(if path.chi[j] { "1" } else { "0" }.into());
            row.extend(path.u[j].iter().map(f64::to_string));
            row.extend(path.v[j].iter().map(f64::to_string));
        }
        csv.write_record(&row).map_err(csv_err)?;
    }
    csv.flush()?;
    Ok(())
}

pub fn path_to_string(path: &PathRecord) -> Result<String> {
    let mut buf = Vec::new();
    write_path(path, &mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Invalid(e.to_string()))
}

fn csv_err(e: csv::Error) -> Error {
    match e.position() {
        Some(p) => Error::Parse { line: p.line() as usize + 1, msg: e.to_string() },
        None => match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            k => Error::Parse { line: 0, msg: format!("{k:?}") },
        },
    }
}

pub fn read_path<R: Read>(mut r: R) -> Result<PathRecord> {
    let mut text = String::new();
    r.read_to_string(&mut text).map_err(|e| Error::Parse { line: 0, msg: e.to_string() })?;
    parse_path(&text)
}

/// Parses and validates a record; every failure names the offending line.
pub fn parse_path(text: &str) -> Result<PathRecord> {
    let bad = |line: usize, msg: String| Error::Parse { line, msg };
    let (first, body) = text.split_once('\n').unwrap_or((text, ""));
    let json = first.trim_end_matches('\r').strip_prefix('#').ok_or_else(|| bad(1, "expected `# {json header}`".into()))?;
    let h: PathHeader = serde_json::from_str(json.trim()).map_err(|e| bad(1, e.to_string()))?;
    if !(h.delta.is_finite() && h.delta > 0.0) {
        return Err(bad(1, format!("delta must be positive, got {}", h.delta)));
    }
    if h.d == 0 || h.d > MAX_DIM || h.n == 0 || h.n > MAX_DIM || h.steps > MAX_STEPS {
        return Err(bad(1, format!("unsupported sizes d = {}, n = {}, steps = {}", h.d, h.n, h.steps)));
    }
    if (h.horizon - h.steps as f64 * h.delta).abs() > 1e-9 * (1.0 + h.horizon.abs()) {
        return Err(bad(1, format!("T = {} is not steps·delta", h.horizon)));
    }

    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(body.as_bytes());
    let cols = rdr.headers().map_err(|e| shift(csv_err(e)))?.clone();
    let want = h.columns();
    if cols.len() != want.len() || cols.iter().zip(&want).any(|(a, b)| a.trim() != b) {
        return Err(bad(2, format!("columns must be {}", want.join(","))));
    }

    let sd = h.delta.sqrt();
    let mut rec = PathRecord {
        delta: h.delta,
        x0: Vec::new(),
        states: Vec::with_capacity(h.steps.min(1 << 16) + 1),
        z: Vec::new(),
        chi: Vec::new(),
        u: Vec::new(),
        v: Vec::new(),
        seed: h.seed,
        stream: h.stream,
        law_id: h.law_id.clone(),
        scheme_id: h.scheme_id.clone(),
    };
    for (k, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| shift(csv_err(e)))?;
        let line = k + 3;
        if k > h.steps {
            return Err(bad(line, format!("more rows than steps + 1 = {}", h.steps + 1)));
        }
        let num = |i: usize| -> Result<f64> {
            let s = row[i].trim();
            let v: f64 = s.parse().map_err(|_| bad(line, format!("column {}: `{s}` is not a number", want[i])))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(bad(line, format!("column {}: non-finite value", want[i])))
            }
        };
        let step = row[0].trim().parse::<usize>().map_err(|_| bad(line, "bad step".into()))?;
        if step != k {
            return Err(bad(line, format!("expected step {k}, got {step}")));
        }
        let t = num(1)?;
        if (t - k as f64 * h.delta).abs() > 1e-9 * (1.0 + t.abs()) {
            return Err(bad(line, format!("t = {t} is off the grid")));
        }
        let x = (0..h.d).map(|i| num(2 + i)).collect::<Result<Vec<_>>>()?;
        let base = 2 + h.d;
        let noise_cols = base..want.len();
        if k == 0 {
            if noise_cols.clone().any(|i| !row[i].trim().is_empty()) {
                return Err(bad(line, "step 0 carries no noise".into()));
            }
            rec.x0 = x.clone();
            rec.states.push(x);
            continue;
        }
        let z = (0..h.n).map(|i| num(base + i)).collect::<Result<Vec<_>>>()?;
        let chi = match row[base + h.n].trim() {
            "0" => false,
            "1" => true,
            s => return Err(bad(line, format!("chi must be 0 or 1, got `{s}`"))),
        };
        let u = (0..h.n).map(|i| num(base + h.n + 1 + i)).collect::<Result<Vec<_>>>()?;
        let v = (0..h.n).map(|i| num(base + 2 * h.n + 1 + i)).collect::<Result<Vec<_>>>()?;
        for i in 0..h.n {
            let lhs = sd * z[i];
            let rhs = if chi { u[i] } else { v[i] };
            if (lhs - rhs).abs() > 1e-12 * (1.0 + lhs.abs()) {
                return Err(bad(line, format!("√δ·Z{i} = {lhs} disagrees with the split value {rhs}")));
            }
        }
        rec.states.push(x);
        rec.z.push(z);
        rec.chi.push(chi);
        rec.u.push(u);
        rec.v.push(v);
    }
    if rec.states.len() != h.steps + 1 {
        return Err(bad(rec.states.len() + 2, format!("expected {} rows, found {}", h.steps + 1, rec.states.len())));
    }
    Ok(rec)
}

// csv positions count from the column header row, which is line 2 of the file
fn shift(e: Error) -> Error {
    match e {
        Error::Parse { line, msg } => Error::Parse { line: line + 1, msg },
        e => e,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::MixtureLaw;
    use crate::scheme::{scheme_from_fn, simulate_path, Grid, IteratedSums};

    fn sample() -> PathRecord {
        let psi = scheme_from_fn(IteratedSums(1), "iter", None).unwrap();
        let law = MixtureLaw::standard(1).unwrap();
        simulate_path(&*psi, &law, &[0.3, -1.0 / 3.0], Grid::new(0.125, 1.0).unwrap(), 7, 3).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let p = sample();
        let s = path_to_string(&p).unwrap();
        assert!(s.starts_with("# {"));
        assert!(s.lines().nth(1).unwrap().starts_with("step,t,X0,X1,Z0,chi,U0,V0"));
        assert_eq!(parse_path(&s).unwrap(), p);
    }

    #[test]
    fn errors_name_the_line() {
        let p = sample();
        let s = path_to_string(&p).unwrap();
        let mut lines: Vec<String> = s.lines().map(String::from).collect();
        lines[4] = lines[4].replacen(",1,", ",7,", 1).replacen(",0,", ",7,", 1);
        match parse_path(&lines.join("\n")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 5),
            other => panic!("{other:?}"),
        }
        let truncated: String = s.lines().take(5).collect::<Vec<_>>().join("\n");
        assert!(matches!(parse_path(&truncated), Err(Error::Parse { .. })));
        assert!(matches!(parse_path("not a header\n"), Err(Error::Parse { line: 1, .. })));
        assert!(parse_path("").is_err());
    }

    #[test]
    fn split_identity_is_checked() {
        let p = sample();
        let mut q = p.clone();
        q.z[2][0] += 0.5;
        let s = path_to_string(&q).unwrap();
        assert!(matches!(parse_path(&s), Err(Error::Parse { line: 6, .. })));
    }
}
