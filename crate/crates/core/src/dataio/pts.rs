//! Plain-text point format.
//!
//! ```text
//! PTS <P> <flags>
//! x y z [nx ny nz] [label]
//! ```
//!
//! `flags` is `-` or a combination of `n` (normals) and `l` (per-point
//! labels). Values are written with nine significant digits.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::geometry::{Labels, PointCloud};

fn pts_err<T>(line: usize, detail: impl Into<String>) -> Result<T> {
    Err(Error::Pts { line, detail: detail.into() })
}

pub fn write_points<W: Write>(w: &mut W, cloud: &PointCloud) -> Result<()> {
    let labels = match &cloud.labels {
        Some(Labels::PerPoint(l)) => Some(l),
        _ => None,
    };
    let mut flags = String::new();
    if cloud.normals.is_some() {
        flags.push('n');
    }
    if labels.is_some() {
        flags.push('l');
    }
    if flags.is_empty() {
        flags.push('-');
    }
    writeln!(w, "PTS {} {flags}", cloud.len())?;
    for (i, q) in cloud.coords.iter().enumerate() {
        write!(w, "{:.8e} {:.8e} {:.8e}", q[0], q[1], q[2])?;
        if let Some(n) = &cloud.normals {
            write!(w, " {:.8e} {:.8e} {:.8e}", n[i][0], n[i][1], n[i][2])?;
        }
        if let Some(l) = labels {
            write!(w, " {}", l[i])?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_points<R: BufRead>(r: R) -> Result<PointCloud> {
    let mut lines = r.lines().enumerate();
    let Some((_, header)) = lines.next() else {
        return pts_err(1, "empty file");
    };
    let header = header?;
    let h: Vec<&str> = header.split_whitespace().collect();
    if h.len() != 3 || h[0] != "PTS" {
        return pts_err(1, "expected 'PTS <P> <flags>'");
    }
    let p: usize = h[1].parse().or_else(|_| pts_err(1, format!("bad point count '{}'", h[1])))?;
    let flags = h[2];
    if flags != "-" && (flags.is_empty() || !flags.chars().all(|c| c == 'n' || c == 'l')) {
        return pts_err(1, format!("unknown flags '{flags}'"));
    }
    let has_n = flags.contains('n');
    let has_l = flags.contains('l');
    let cols = 3 + if has_n { 3 } else { 0 } + usize::from(has_l);

    let (mut coords, mut normals, mut labels) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..p {
        let Some((i, line)) = lines.next() else {
            return pts_err(coords.len() + 2, format!("truncated: {} of {p} points", coords.len()));
        };
        let line = line?;
        let lineno = i + 1;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != cols {
            return pts_err(lineno, format!("expected {cols} columns for flags '{flags}', found {}", toks.len()));
        }
        let num = |t: &str| -> Result<f64> { t.parse::<f64>().or_else(|_| pts_err(lineno, format!("'{t}' is not a number"))) };
        coords.push([num(toks[0])?, num(toks[1])?, num(toks[2])?]);
        if has_n {
            normals.push([num(toks[3])?, num(toks[4])?, num(toks[5])?]);
        }
        if has_l {
            let t = toks[cols - 1];
            labels.push(t.parse::<usize>().or_else(|_| pts_err(lineno, format!("'{t}' is not a label")))?);
        }
    }
    if coords.is_empty() {
        return pts_err(1, "a cloud needs at least one point");
    }
    let mut cloud = PointCloud::new(coords)?;
    if has_n {
        cloud.normals = Some(normals);
    }
    if has_l {
        cloud.labels = Some(Labels::PerPoint(labels));
    }
    Ok(cloud)
}

pub fn write_points_file(path: &std::path::Path, cloud: &PointCloud) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_points(&mut f, cloud)?;
    f.flush()?;
    Ok(())
}

pub fn read_points_file(path: &std::path::Path) -> Result<PointCloud> {
    read_points(std::io::BufReader::new(std::fs::File::open(path)?))
}
