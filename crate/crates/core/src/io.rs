//! Flat little-endian binary dumps: a 24-byte header (two `u64` counts and
//! an `f64` time) followed by `f64` records, plus a text manifest.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::fields::{GridField, PhaseGrid};
use crate::particles::ParticleEnsemble;

fn put(w: &mut impl Write, path: &Path, bytes: &[u8]) -> Result<()> {
    w.write_all(bytes).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn write_records(path: &Path, a: u64, b: u64, t: f64, rows: impl Iterator<Item = f64>) -> Result<()> {
    let mut w = create(path)?;
    put(&mut w, path, &a.to_le_bytes())?;
    put(&mut w, path, &b.to_le_bytes())?;
    put(&mut w, path, &t.to_le_bytes())?;
    for x in rows {
        put(&mut w, path, &x.to_le_bytes())?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Header `(a, b, t)` and the records of a dump.
pub fn read_records(path: &Path) -> Result<(u64, u64, f64, Vec<f64>)> {
    let mut r = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    let mut buf = Vec::new();
    r.read_to_end(&mut buf).map_err(|e| Error::io(path, e))?;
    if buf.len() < 24 || buf.len() % 8 != 0 {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::InvalidData, "truncated record file"),
        ));
    }
    let word = |i: usize| -> [u8; 8] { buf[8 * i..8 * i + 8].try_into().unwrap() };
    let a = u64::from_le_bytes(word(0));
    let b = u64::from_le_bytes(word(1));
    let t = f64::from_le_bytes(word(2));
    let rows = (3..buf.len() / 8).map(|i| f64::from_le_bytes(word(i))).collect();
    Ok((a, b, t, rows))
}

/// Header `(N, d, t)`, then per particle `x_1..x_d, v_1..v_d`.
pub fn write_particles(path: &Path, s: &ParticleEnsemble) -> Result<()> {
    let rows = (0..s.len()).flat_map(|i| s.x(i).iter().chain(s.v(i)).copied().collect::<Vec<_>>());
    write_records(path, s.len() as u64, s.dim as u64, s.time, rows)
}

/// Header `(n_x, n_v, t)`, then the values in row-major `ix * n_v + iv` order.
pub fn write_field(path: &Path, f: &GridField, t: f64) -> Result<()> {
    write_records(path, f.grid.nx as u64, f.grid.nv as u64, t, f.values.iter().copied())
}

pub fn read_field(path: &Path, lx: f64, lv: f64) -> Result<(GridField, f64)> {
    let (nx, nv, t, values) = read_records(path)?;
    let grid = PhaseGrid::new(nx as usize, nv as usize, lx, lv)?;
    if values.len() != grid.len() {
        return Err(Error::GridMismatch(format!(
            "{} holds {} values for a {nx}x{nv} grid",
            path.display(),
            values.len()
        )));
    }
    Ok((GridField { grid, values }, t))
}

/// `x,v,value` rows.
pub fn write_field_csv(path: &Path, f: &GridField) -> Result<()> {
    let mut w = create(path)?;
    put(&mut w, path, b"x,v,value\n")?;
    let g = f.grid;
    for ix in 0..g.nx {
        for iv in 0..g.nv {
            let line = format!("{},{},{}\n", g.x(ix), g.v(iv), f.at(ix, iv));
            put(&mut w, path, line.as_bytes())?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_manifest(path: &Path, lines: &[String]) -> Result<()> {
    let mut body = lines.join("\n");
    body.push('\n');
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}
