//! File formats: transaction/particle CSV inputs, field snapshots,
//! dispersion-sweep and credit-series tables, and run metadata JSON.
//! Floats are written in shortest round-trip form so identical runs produce
//! identical bytes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;
use thiserror::Error;

use crate::espace::{Grid, ScalarField, VectorField};
use crate::hydro::FieldState;
use crate::kinetic::{CounterpartyIntegrals, EParticle, FieldDensity, TransactionRecord};

#[derive(Debug, Error)]
pub enum FormatError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Parse(String),
    #[error("file shape mismatch: {0}")]
    Shape(String),
}

fn parse_f64(s: &str, what: &str) -> Result<f64, FormatError> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| FormatError::Parse(format!("cannot parse {what} from {s:?}")))
}

fn parse_u64(s: &str, what: &str) -> Result<u64, FormatError> {
    s.trim()
        .parse::<u64>()
        .map_err(|_| FormatError::Parse(format!("cannot parse {what} from {s:?}")))
}

/// Formats a complex value as `re`, or `re+imi` / `re-imi` when the
/// imaginary part is nonzero.
pub fn format_complex(c: Complex64) -> String {
    if c.im == 0.0 {
        format!("{}", c.re)
    } else if c.im < 0.0 {
        format!("{}-{}i", c.re, -c.im)
    } else {
        format!("{}+{}i", c.re, c.im)
    }
}

/// Parses the output of [`format_complex`], tolerating exponent notation.
pub fn parse_complex(s: &str) -> Result<Complex64, FormatError> {
    let s = s.trim();
    if !s.ends_with('i') {
        return Ok(Complex64::new(parse_f64(s, "complex real part")?, 0.0));
    }
    let body = &s[..s.len() - 1];
    // The separating sign is the last '+'/'-' that is neither the leading
    // sign nor part of an exponent.
    let bytes = body.as_bytes();
    let mut split = None;
    for idx in (1..bytes.len()).rev() {
        let c = bytes[idx];
        if (c == b'+' || c == b'-') && !matches!(bytes[idx - 1], b'e' | b'E') {
            split = Some(idx);
            break;
        }
    }
    let idx = split.ok_or_else(|| FormatError::Parse(format!("malformed complex {s:?}")))?;
    let re = parse_f64(&body[..idx], "complex real part")?;
    let im_str = &body[idx..];
    let im = parse_f64(im_str, "complex imaginary part")?;
    Ok(Complex64::new(re, im))
}

fn coord_headers(n: usize) -> Vec<String> {
    let mut h: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
    h.extend((1..=n).map(|i| format!("y{i}")));
    h
}

// ---------------------------------------------------------------------------
// Transactions and particles
// ---------------------------------------------------------------------------

/// Header: `debtor_id,creditor_id,x1..xn,y1..yn,amount,vx1..vxn,vy1..vyn`.
pub fn write_transactions_csv(
    path: &Path,
    n: usize,
    records: &[TransactionRecord],
) -> Result<(), FormatError> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    let mut header = vec!["debtor_id".to_string(), "creditor_id".to_string()];
    header.extend(coord_headers(n));
    header.push("amount".to_string());
    header.extend((1..=n).map(|i| format!("vx{i}")));
    header.extend((1..=n).map(|i| format!("vy{i}")));
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![r.debtor_id.to_string(), r.creditor_id.to_string()];
        row.extend(r.debtor_coords.iter().map(|v| format!("{v}")));
        row.extend(r.creditor_coords.iter().map(|v| format!("{v}")));
        row.push(format!("{}", r.amount));
        row.extend(r.debtor_velocity.iter().map(|v| format!("{v}")));
        row.extend(r.creditor_velocity.iter().map(|v| format!("{v}")));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_transactions_csv(path: &Path, n: usize) -> Result<Vec<TransactionRecord>, FormatError> {
    let mut reader = csv::Reader::from_reader(BufReader::new(File::open(path)?));
    let expected = 3 + 4 * n;
    let mut out = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != expected {
            return Err(FormatError::Shape(format!(
                "row {line}: expected {expected} columns for n = {n}, got {}",
                record.len()
            )));
        }
        let fld = |i: usize| record.get(i).unwrap();
        let span = |start: usize| -> Result<Vec<f64>, FormatError> {
            (start..start + n).map(|i| parse_f64(fld(i), "coordinate")).collect()
        };
        out.push(TransactionRecord {
            debtor_id: parse_u64(fld(0), "debtor_id")?,
            creditor_id: parse_u64(fld(1), "creditor_id")?,
            debtor_coords: span(2)?,
            creditor_coords: span(2 + n)?,
            amount: parse_f64(fld(2 + 2 * n), "amount")?,
            debtor_velocity: span(3 + 2 * n)?,
            creditor_velocity: span(3 + 3 * n)?,
        });
    }
    Ok(out)
}

/// Header: `id,x1..xn,v1..vn,u1..ul`.
pub fn write_particles_csv(
    path: &Path,
    n: usize,
    nvars: usize,
    particles: &[EParticle],
) -> Result<(), FormatError> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    let mut header = vec!["id".to_string()];
    header.extend((1..=n).map(|i| format!("x{i}")));
    header.extend((1..=n).map(|i| format!("v{i}")));
    header.extend((1..=nvars).map(|i| format!("u{i}")));
    w.write_record(&header)?;
    for p in particles {
        let mut row = vec![p.id.to_string()];
        row.extend(p.coords.iter().map(|v| format!("{v}")));
        row.extend(p.velocity.iter().map(|v| format!("{v}")));
        row.extend(p.variables.iter().map(|v| format!("{v}")));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_particles_csv(
    path: &Path,
    n: usize,
    nvars: usize,
) -> Result<Vec<EParticle>, FormatError> {
    let mut reader = csv::Reader::from_reader(BufReader::new(File::open(path)?));
    let expected = 1 + 2 * n + nvars;
    let mut out = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != expected {
            return Err(FormatError::Shape(format!(
                "row {line}: expected {expected} columns, got {}",
                record.len()
            )));
        }
        let fld = |i: usize| record.get(i).unwrap();
        let span = |start: usize, len: usize| -> Result<Vec<f64>, FormatError> {
            (start..start + len).map(|i| parse_f64(fld(i), "value")).collect()
        };
        out.push(EParticle {
            id: parse_u64(fld(0), "id")?,
            coords: span(1, n)?,
            velocity: span(1 + n, n)?,
            variables: span(1 + 2 * n, nvars)?,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Field snapshots
// ---------------------------------------------------------------------------

/// Header: `x1..xn,y1..yn,CL,PC,v1..v2n,u1..u2n`; one row per node in
/// row-major node order.
pub fn write_snapshot(path: &Path, state: &FieldState) -> Result<(), FormatError> {
    let grid = state.grid();
    let naxes = grid.num_axes();
    let n = naxes / 2;
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    let mut header = coord_headers(n);
    header.push("CL".to_string());
    header.push("PC".to_string());
    header.extend((1..=naxes).map(|i| format!("v{i}")));
    header.extend((1..=naxes).map(|i| format!("u{i}")));
    w.write_record(&header)?;
    for node in 0..grid.node_count() {
        let mut row: Vec<String> = (0..naxes)
            .map(|a| format!("{}", grid.coord_on_axis(node, a)))
            .collect();
        row.push(format!("{}", state.cl.values()[node]));
        row.push(format!("{}", state.pc.values()[node]));
        row.extend((0..naxes).map(|c| format!("{}", state.v.component(node, c))));
        row.extend((0..naxes).map(|c| format!("{}", state.u.component(node, c))));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a snapshot written by [`write_snapshot`] back onto its grid.
pub fn read_snapshot(path: &Path, grid: &Arc<Grid>, time: f64) -> Result<FieldState, FormatError> {
    let naxes = grid.num_axes();
    let expected = 2 * naxes + naxes + 2;
    let mut reader = csv::Reader::from_reader(BufReader::new(File::open(path)?));
    let mut state = FieldState {
        time,
        cl: ScalarField::zeros(grid.clone()),
        pc: ScalarField::zeros(grid.clone()),
        v: VectorField::zeros(grid.clone()),
        u: VectorField::zeros(grid.clone()),
    };
    let mut node = 0usize;
    for record in reader.records() {
        let record = record?;
        if record.len() != expected {
            return Err(FormatError::Shape(format!(
                "node {node}: expected {expected} columns, got {}",
                record.len()
            )));
        }
        if node >= grid.node_count() {
            return Err(FormatError::Shape(format!(
                "snapshot has more rows than the grid's {} nodes",
                grid.node_count()
            )));
        }
        let fld = |i: usize| record.get(i).unwrap();
        for a in 0..naxes {
            let written = parse_f64(fld(a), "coordinate")?;
            let own = grid.coord_on_axis(node, a);
            if (written - own).abs() > 1e-9 * own.abs().max(1.0) {
                return Err(FormatError::Shape(format!(
                    "node {node}: coordinate {written} does not match grid node at {own}"
                )));
            }
        }
        state.cl.values_mut()[node] = parse_f64(fld(naxes), "CL")?;
        state.pc.values_mut()[node] = parse_f64(fld(naxes + 1), "PC")?;
        for c in 0..naxes {
            let v = parse_f64(fld(naxes + 2 + c), "v")?;
            state.v.set_component(node, c, v);
            let u = parse_f64(fld(2 * naxes + 2 + c), "u")?;
            state.u.set_component(node, c, u);
        }
        node += 1;
    }
    if node != grid.node_count() {
        return Err(FormatError::Shape(format!(
            "snapshot has {node} rows, grid has {} nodes",
            grid.node_count()
        )));
    }
    Ok(state)
}

/// Header: `x1..xn,y1..yn,CL,v1..v2n`; the velocity is the combined
/// (debtor-block, creditor-block) vector.
pub fn write_field_density(path: &Path, fd: &FieldDensity) -> Result<(), FormatError> {
    let grid = fd.cl.grid();
    let naxes = grid.num_axes();
    let n = naxes / 2;
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    let mut header = coord_headers(n);
    header.push("CL".to_string());
    header.extend((1..=naxes).map(|i| format!("v{i}")));
    w.write_record(&header)?;
    for node in 0..grid.node_count() {
        let mut row: Vec<String> = (0..naxes)
            .map(|a| format!("{}", grid.coord_on_axis(node, a)))
            .collect();
        row.push(format!("{}", fd.cl.values()[node]));
        for c in 0..naxes {
            let v = fd.v_x.component(node, c) + fd.v_y.component(node, c);
            row.push(format!("{v}"));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Header: `x1..xn,loans,credits`; one row per space-grid node.
pub fn write_counterparty(path: &Path, ci: &CounterpartyIntegrals) -> Result<(), FormatError> {
    let grid = ci.loans.grid();
    let n = grid.num_axes();
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    let mut header: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
    header.push("loans".to_string());
    header.push("credits".to_string());
    w.write_record(&header)?;
    for node in 0..grid.node_count() {
        let mut row: Vec<String> = (0..n)
            .map(|a| format!("{}", grid.coord_on_axis(node, a)))
            .collect();
        row.push(format!("{}", ci.loans.values()[node]));
        row.push(format!("{}", ci.credits.values()[node]));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Dispersion sweep and credit series
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct DispersionRow {
    pub alpha1: f64,
    pub alpha2: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub a: f64,
    pub b: f64,
    pub regime: String,
    pub c1_sq: Complex64,
    pub c2_sq: Complex64,
    pub omega: f64,
    pub gamma: f64,
}

pub const DISPERSION_HEADER: [&str; 11] = [
    "alpha1", "alpha2", "beta1", "beta2", "a", "b", "regime", "c1_sq", "c2_sq", "omega", "gamma",
];

pub fn write_dispersion_csv(path: &Path, rows: &[DispersionRow]) -> Result<(), FormatError> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(DISPERSION_HEADER)?;
    for r in rows {
        w.write_record([
            format!("{}", r.alpha1),
            format!("{}", r.alpha2),
            format!("{}", r.beta1),
            format!("{}", r.beta2),
            format!("{}", r.a),
            format!("{}", r.b),
            r.regime.clone(),
            format_complex(r.c1_sq),
            format_complex(r.c2_sq),
            format!("{}", r.omega),
            format!("{}", r.gamma),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dispersion_csv(path: &Path) -> Result<Vec<DispersionRow>, FormatError> {
    let mut reader = csv::Reader::from_reader(BufReader::new(File::open(path)?));
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record?;
        if record.len() != DISPERSION_HEADER.len() {
            return Err(FormatError::Shape(format!(
                "dispersion row has {} columns, expected {}",
                record.len(),
                DISPERSION_HEADER.len()
            )));
        }
        let fld = |i: usize| record.get(i).unwrap();
        out.push(DispersionRow {
            alpha1: parse_f64(fld(0), "alpha1")?,
            alpha2: parse_f64(fld(1), "alpha2")?,
            beta1: parse_f64(fld(2), "beta1")?,
            beta2: parse_f64(fld(3), "beta2")?,
            a: parse_f64(fld(4), "a")?,
            b: parse_f64(fld(5), "b")?,
            regime: fld(6).to_string(),
            c1_sq: parse_complex(fld(7))?,
            c2_sq: parse_complex(fld(8))?,
            omega: parse_f64(fld(9), "omega")?,
            gamma: parse_f64(fld(10), "gamma")?,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CreditRow {
    pub t: f64,
    pub c_total: f64,
    pub c0: f64,
    pub c_paper: f64,
    pub c_quadrature: f64,
}

pub const CREDIT_HEADER: [&str; 5] = ["t", "C_total", "C0", "c_paper", "c_quadrature"];

pub fn write_credit_csv(path: &Path, rows: &[CreditRow]) -> Result<(), FormatError> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(CREDIT_HEADER)?;
    for r in rows {
        w.write_record([
            format!("{}", r.t),
            format!("{}", r.c_total),
            format!("{}", r.c0),
            format!("{}", r.c_paper),
            format!("{}", r.c_quadrature),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_credit_csv(path: &Path) -> Result<Vec<CreditRow>, FormatError> {
    let mut reader = csv::Reader::from_reader(BufReader::new(File::open(path)?));
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record?;
        if record.len() != CREDIT_HEADER.len() {
            return Err(FormatError::Shape(format!(
                "credit row has {} columns, expected {}",
                record.len(),
                CREDIT_HEADER.len()
            )));
        }
        let fld = |i: usize| record.get(i).unwrap();
        out.push(CreditRow {
            t: parse_f64(fld(0), "t")?,
            c_total: parse_f64(fld(1), "C_total")?,
            c0: parse_f64(fld(2), "C0")?,
            c_paper: parse_f64(fld(3), "c_paper")?,
            c_quadrature: parse_f64(fld(4), "c_quadrature")?,
        });
    }
    Ok(out)
}

/// Serializes any serde value as pretty JSON with a trailing newline.
pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), FormatError> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)
        .map_err(|e| FormatError::Parse(e.to_string()))?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}
