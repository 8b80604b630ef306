//! CSV tables. Floats are written with 17 significant digits so that every
//! value reads back to the same bits.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use anyhow::{Context, Result};
use skewembed::transform::{SpecMeta, SpecRow};
use skewembed::{EmbeddingSpec, ExitLaw, TangentProfile};

use crate::Invalid;

pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))
}

/// Columns: `s, F, h, theta, phi, R, S, Gamma`.
pub fn write_profile(path: &Path, profile: &TangentProfile) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["s", "F", "h", "theta", "phi", "R", "S", "Gamma"])?;
    for p in profile.points() {
        w.write_record(
            [
                p.s,
                p.f,
                p.h,
                p.upper_contact,
                p.lower_contact,
                p.upper_slope,
                p.lower_slope,
                p.survival,
            ]
            .map(num),
        )?;
    }
    w.flush()?;
    Ok(())
}

const SPEC_HEADER: [&str; 8] = ["s", "l", "G", "a", "b", "alpha", "beta", "p"];

/// `# key=value` metadata lines, then columns `s, l, G, a, b, alpha, beta, p`.
pub fn write_spec(path: &Path, spec: &EmbeddingSpec) -> Result<()> {
    let mut file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let m = spec.meta();
    writeln!(file, "# l_max={}", num(m.l_max))?;
    writeln!(file, "# terminal_mass={}", num(m.terminal_mass))?;
    writeln!(file, "# terminal_location={}", num(m.terminal_location))?;
    writeln!(file, "# truncated={}", m.truncated)?;
    writeln!(file, "# gamma_floor={}", num(m.gamma_floor))?;
    writeln!(file, "# preset={}", serde_json::to_string(&m.preset)?)?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(SPEC_HEADER)?;
    for r in spec.rows() {
        w.write_record([r.s, r.l, r.g, r.a, r.b, r.alpha, r.beta, r.p].map(num))?;
    }
    w.flush()?;
    Ok(())
}

fn meta_value<'a>(lines: &'a [(String, String)], key: &str) -> Result<&'a str> {
    lines
        .iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
        .ok_or_else(|| Invalid(format!("spec table is missing '# {key}='")).into())
}

fn parse_num(s: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Invalid(format!("bad number '{s}' in spec table")).into())
}

pub fn read_spec(path: &Path) -> Result<EmbeddingSpec> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut meta_lines = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        let Some(rest) = line.strip_prefix('#') else {
            break;
        };
        if let Some((k, v)) = rest.trim().split_once('=') {
            meta_lines.push((k.trim().to_string(), v.trim().to_string()));
        }
    }
    let meta = SpecMeta {
        l_max: parse_num(meta_value(&meta_lines, "l_max")?)?,
        terminal_mass: parse_num(meta_value(&meta_lines, "terminal_mass")?)?,
        terminal_location: parse_num(meta_value(&meta_lines, "terminal_location")?)?,
        truncated: meta_value(&meta_lines, "truncated")?
            .parse()
            .map_err(|_| Invalid("truncated must be true or false".into()))?,
        gamma_floor: parse_num(meta_value(&meta_lines, "gamma_floor")?)?,
        preset: serde_json::from_str(meta_value(&meta_lines, "preset")?)
            .map_err(|e| Invalid(format!("bad preset in spec table: {e}")))?,
    };

    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != SPEC_HEADER {
        return Err(Invalid(format!(
            "spec table columns {header:?}, expected {SPEC_HEADER:?}"
        ))
        .into());
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let v: Vec<f64> = rec.iter().map(parse_num).collect::<Result<_>>()?;
        if v.len() != SPEC_HEADER.len() {
            return Err(Invalid("short row in spec table".into()).into());
        }
        rows.push(SpecRow {
            s: v[0],
            l: v[1],
            g: v[2],
            a: v[3],
            b: v[4],
            alpha: v[5],
            beta: v[6],
            p: v[7],
        });
    }
    Ok(EmbeddingSpec::from_table(rows, meta)?)
}

/// Columns: `location, mass`, merged over the stopping mechanisms.
pub fn write_exit_law(path: &Path, law: &ExitLaw) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["location", "mass"])?;
    for a in law.atoms() {
        w.write_record([num(a.location), num(a.mass)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_rows<const N: usize>(
    path: &Path,
    header: [&str; N],
    rows: impl IntoIterator<Item = [String; N]>,
) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}
