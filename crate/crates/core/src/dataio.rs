//! Text formats for annotations, detections and encoded representations.
//!
//! Ground truth, one object per line (DOTA v1 style):
//!
//! ```text
//! x1 y1 x2 y2 x3 y3 x4 y4 category difficult
//! ```
//!
//! Detections, one per line:
//!
//! ```text
//! category score x1 y1 x2 y2 x3 y3 x4 y4
//! ```
//!
//! In the concatenated layout each line is prefixed by an image id column.
//! Blank lines, lines starting with `#`, and DOTA `imagesource:`/`gsd:`
//! headers are skipped. Numbers are written with six decimals.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{HBox, Quad};
use crate::representation::GlidingRep;

/// Records grouped by image id, iterated in sorted id order.
pub type PerImage<T> = BTreeMap<String, Vec<T>>;

#[derive(Debug, Clone, PartialEq)]
pub struct GtRecord {
    pub quad: Quad,
    pub class: String,
    pub difficult: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetRecord {
    pub class: String,
    pub score: f64,
    pub quad: Quad,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Layout {
    /// A directory of `<image_id>.txt` files, or one file holding one image.
    #[default]
    PerImage,
    /// One file whose first column is the image id.
    Concatenated,
}

fn is_skippable(line: &str) -> bool {
    let t = line.trim();
    t.is_empty() || t.starts_with('#') || t.starts_with("imagesource:") || t.starts_with("gsd:")
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn parse_f64(tok: &str, line: usize, what: &str) -> Result<f64> {
    let v: f64 = tok
        .parse()
        .map_err(|_| parse_err(line, format!("{what} `{tok}` is not a number")))?;
    if !v.is_finite() {
        return Err(parse_err(line, format!("{what} `{tok}` is not finite")));
    }
    Ok(v)
}

fn parse_quad(toks: &[&str], line: usize) -> Result<Quad> {
    let mut c = [0.0; 8];
    for (i, t) in toks.iter().enumerate() {
        c[i] = parse_f64(t, line, "coordinate")?;
    }
    Quad::from_coords(c).map_err(|e| parse_err(line, e.to_string()))
}

fn fmt_quad(out: &mut String, q: &Quad) {
    for (i, v) in q.coords().iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        let _ = write!(out, "{v:.6}");
    }
}

/// Parses one ground-truth line; `line_no` is 1-based and only used in errors.
pub fn parse_gt_line(line: &str, line_no: usize) -> Result<GtRecord> {
    let toks: Vec<&str> = line.split_whitespace().collect();
    if toks.len() != 10 {
        return Err(parse_err(
            line_no,
            format!("expected 10 fields (8 coordinates, category, difficult), found {}", toks.len()),
        ));
    }
    let quad = parse_quad(&toks[..8], line_no)?;
    let difficult = match toks[9] {
        "0" => false,
        "1" => true,
        other => return Err(parse_err(line_no, format!("difficult flag `{other}` is not 0 or 1"))),
    };
    Ok(GtRecord {
        quad,
        class: toks[8].to_string(),
        difficult,
    })
}

pub fn emit_gt_line(rec: &GtRecord) -> String {
    let mut s = String::new();
    fmt_quad(&mut s, &rec.quad);
    let _ = write!(s, " {} {}", rec.class, u8::from(rec.difficult));
    s
}

pub fn parse_det_line(line: &str, line_no: usize) -> Result<DetRecord> {
    let toks: Vec<&str> = line.split_whitespace().collect();
    if toks.len() != 10 {
        return Err(parse_err(
            line_no,
            format!("expected 10 fields (category, score, 8 coordinates), found {}", toks.len()),
        ));
    }
    let score = parse_f64(toks[1], line_no, "score")?;
    if !(0.0..=1.0).contains(&score) {
        return Err(parse_err(line_no, format!("score {score} outside [0, 1]")));
    }
    Ok(DetRecord {
        class: toks[0].to_string(),
        score,
        quad: parse_quad(&toks[2..], line_no)?,
    })
}

pub fn emit_det_line(rec: &DetRecord) -> String {
    let mut s = format!("{} {:.6} ", rec.class, rec.score);
    fmt_quad(&mut s, &rec.quad);
    s
}

fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !is_skippable(l))
}

pub fn parse_gt_text(text: &str) -> Result<Vec<GtRecord>> {
    lines(text).map(|(n, l)| parse_gt_line(l, n)).collect()
}

pub fn parse_det_text(text: &str) -> Result<Vec<DetRecord>> {
    lines(text).map(|(n, l)| parse_det_line(l, n)).collect()
}

pub fn emit_gt_text(recs: &[GtRecord]) -> String {
    recs.iter().map(|r| emit_gt_line(r) + "\n").collect()
}

pub fn emit_det_text(recs: &[DetRecord]) -> String {
    recs.iter().map(|r| emit_det_line(r) + "\n").collect()
}

fn split_image_id(line: &str, line_no: usize) -> Result<(&str, &str)> {
    let line = line.trim_start();
    let end = line
        .find(char::is_whitespace)
        .ok_or_else(|| parse_err(line_no, "missing fields after image id"))?;
    Ok((&line[..end], &line[end..]))
}

fn parse_concat<T>(text: &str, f: impl Fn(&str, usize) -> Result<T>) -> Result<PerImage<T>> {
    let mut out: PerImage<T> = BTreeMap::new();
    for (n, l) in lines(text) {
        let (id, rest) = split_image_id(l, n)?;
        out.entry(id.to_string()).or_default().push(f(rest, n)?);
    }
    Ok(out)
}

fn emit_concat<T>(data: &PerImage<T>, f: impl Fn(&T) -> String) -> String {
    let mut s = String::new();
    for (id, recs) in data {
        for r in recs {
            let _ = writeln!(s, "{id} {}", f(r));
        }
    }
    s
}

pub fn parse_gt_concat(text: &str) -> Result<PerImage<GtRecord>> {
    parse_concat(text, parse_gt_line)
}

pub fn parse_det_concat(text: &str) -> Result<PerImage<DetRecord>> {
    parse_concat(text, parse_det_line)
}

pub fn emit_gt_concat(data: &PerImage<GtRecord>) -> String {
    emit_concat(data, emit_gt_line)
}

pub fn emit_det_concat(data: &PerImage<DetRecord>) -> String {
    emit_concat(data, emit_det_line)
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn with_path(path: &Path, e: Error) -> Error {
    match e {
        Error::Parse { line, message } => Error::Parse {
            line,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    }
}

fn image_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Sorted `*.txt` files of a directory.
pub fn list_txt_files(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.is_file() && p.extension().is_some_and(|e| e == "txt") {
            files.push(p);
        }
    }
    files.sort();
    Ok(files)
}

fn read_per_image<T>(
    path: &Path,
    layout: Layout,
    text_parser: fn(&str) -> Result<Vec<T>>,
    concat_parser: fn(&str) -> Result<PerImage<T>>,
) -> Result<PerImage<T>> {
    if path.is_dir() {
        let mut out = BTreeMap::new();
        for f in list_txt_files(path)? {
            let recs = text_parser(&read_text(&f)?).map_err(|e| with_path(&f, e))?;
            out.insert(image_id(&f), recs);
        }
        return Ok(out);
    }
    let text = read_text(path)?;
    match layout {
        Layout::Concatenated => concat_parser(&text).map_err(|e| with_path(path, e)),
        Layout::PerImage => {
            let recs = text_parser(&text).map_err(|e| with_path(path, e))?;
            Ok(BTreeMap::from([(image_id(path), recs)]))
        }
    }
}

pub fn read_gts(path: &Path, layout: Layout) -> Result<PerImage<GtRecord>> {
    read_per_image(path, layout, parse_gt_text, parse_gt_concat)
}

pub fn read_dets(path: &Path, layout: Layout) -> Result<PerImage<DetRecord>> {
    read_per_image(path, layout, parse_det_text, parse_det_concat)
}

pub const REPS_HEADER: &str = "image_id,class,x,y,w,h,alpha1,alpha2,alpha3,alpha4,r";

#[derive(Debug, Clone, PartialEq)]
pub struct RepRow {
    pub image_id: String,
    pub class: String,
    pub rep: GlidingRep,
}

pub fn emit_reps_csv(rows: &[RepRow]) -> String {
    let mut s = String::from(REPS_HEADER);
    s.push('\n');
    for row in rows {
        let r = &row.rep;
        let b = &r.hbox;
        let _ = writeln!(
            s,
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            row.image_id, row.class, b.x, b.y, b.w, b.h, r.alpha[0], r.alpha[1], r.alpha[2], r.alpha[3], r.r
        );
    }
    s
}

pub fn parse_reps_csv(text: &str) -> Result<Vec<RepRow>> {
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r'))) {
        if line.trim().is_empty() || line.starts_with("image_id,") || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 11 {
            return Err(parse_err(n, format!("expected 11 columns, found {}", f.len())));
        }
        let v: Vec<f64> = f[2..]
            .iter()
            .map(|t| parse_f64(t.trim(), n, "value"))
            .collect::<Result<_>>()?;
        let hbox = HBox::new(v[0], v[1], v[2], v[3]).map_err(|e| parse_err(n, e.to_string()))?;
        let rep = GlidingRep::new(hbox, [v[4], v[5], v[6], v[7]], v[8])
            .map_err(|e| parse_err(n, e.to_string()))?;
        rows.push(RepRow {
            image_id: f[0].to_string(),
            class: f[1].to_string(),
            rep,
        });
    }
    Ok(rows)
}
