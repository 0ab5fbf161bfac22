//! Raster perception: binary masks in, centerlines and marker centroids
//! out. Covers rasterizing simulated geometry for round-trip tests,
//! medial-axis centerline extraction, HSV marker tracking, and repair of
//! frames lost to blur or occlusion.

use crate::error::{Result, SysidError};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Binary foreground/background frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskFrame {
    pub width: usize,
    pub height: usize,
    bits: Vec<bool>,
}

impl MaskFrame {
    pub fn new(width: usize, height: usize) -> Self {
        assert!(width > 0 && height > 0, "mask dimensions must be positive");
        Self { width, height, bits: vec![false; width * height] }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn foreground_count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty_mask(&self) -> bool {
        self.foreground_count() == 0
    }

    /// Rotate 90 degrees clockwise: (x, y) -> (height-1-y, x).
    pub fn rotate90(&self) -> MaskFrame {
        let mut out = MaskFrame::new(self.height, self.width);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    out.set(self.height - 1 - y, x, true);
                }
            }
        }
        out
    }
}

/// Interleaved RGB frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColorFrame {
    pub width: usize,
    pub height: usize,
    data: Vec<[u8; 3]>,
}

impl ColorFrame {
    pub fn new(width: usize, height: usize) -> Self {
        assert!(width > 0 && height > 0, "frame dimensions must be positive");
        Self { width, height, data: vec![[0; 3]; width * height] }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        self.data[y * self.width + x] = rgb;
    }
}

/// Which frame edge the manipulator base is anchored to; decides the
/// orientation of extracted centerlines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseEdge {
    Left,
    Top,
}

/// Inclusive HSV band; hue in degrees [0, 360), saturation and value in
/// [0, 1]. `h_lo > h_hi` selects the wraparound band through 0 (reds).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HsvRange {
    pub h_lo: f64,
    pub h_hi: f64,
    pub s_lo: f64,
    pub s_hi: f64,
    pub v_lo: f64,
    pub v_hi: f64,
}

impl HsvRange {
    pub fn contains(&self, rgb: [u8; 3]) -> bool {
        let (h, s, v) = rgb_to_hsv(rgb);
        let hue_ok = if self.h_lo <= self.h_hi {
            h >= self.h_lo && h <= self.h_hi
        } else {
            h >= self.h_lo || h <= self.h_hi
        };
        hue_ok && s >= self.s_lo && s <= self.s_hi && v >= self.v_lo && v <= self.v_hi
    }
}

fn rgb_to_hsv(rgb: [u8; 3]) -> (f64, f64, f64) {
    let r = rgb[0] as f64 / 255.0;
    let g = rgb[1] as f64 / 255.0;
    let b = rgb[2] as f64 / 255.0;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        60.0 * (((g - b) / delta).rem_euclid(6.0))
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    let s = if max == 0.0 { 0.0 } else { delta / max };
    (h, s, max)
}

/// Axis-aligned region of interest in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Roi {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

/// Stamp a polyline of `thickness` pixels into a binary mask: foreground is
/// every pixel within `thickness / 2` of the curve. Points falling outside
/// the frame are clipped with a warning.
pub fn rasterize_rod(
    points: &[[f64; 2]],
    thickness: f64,
    dims: (usize, usize),
) -> Result<MaskFrame> {
    if points.len() < 2 {
        return Err(SysidError::DegenerateInput("polyline needs at least 2 points".into()));
    }
    if thickness < 2.0 {
        return Err(SysidError::DegenerateInput(format!("thickness {thickness} < 2 px")));
    }
    let total: f64 = points
        .windows(2)
        .map(|w| ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt())
        .sum();
    if total == 0.0 {
        return Err(SysidError::DegenerateInput("zero-length polyline".into()));
    }
    let (w, h) = dims;
    let mut clipped = false;
    let clamp_pt = |p: [f64; 2]| -> [f64; 2] {
        [p[0].clamp(0.0, (w - 1) as f64), p[1].clamp(0.0, (h - 1) as f64)]
    };
    for p in points {
        if p[0] < 0.0 || p[1] < 0.0 || p[0] > (w - 1) as f64 || p[1] > (h - 1) as f64 {
            clipped = true;
        }
    }
    if clipped {
        log::warn!("rasterize_rod: polyline extends outside {w}x{h} frame, clipping");
    }

    let r = thickness / 2.0;
    let mut mask = MaskFrame::new(w, h);
    for seg in points.windows(2) {
        let a = clamp_pt(seg[0]);
        let b = clamp_pt(seg[1]);
        let x0 = ((a[0].min(b[0]) - r).floor().max(0.0)) as usize;
        let x1 = ((a[0].max(b[0]) + r).ceil().min((w - 1) as f64)) as usize;
        let y0 = ((a[1].min(b[1]) - r).floor().max(0.0)) as usize;
        let y1 = ((a[1].max(b[1]) + r).ceil().min((h - 1) as f64)) as usize;
        let d = [b[0] - a[0], b[1] - a[1]];
        let len2 = d[0] * d[0] + d[1] * d[1];
        for y in y0..=y1 {
            for x in x0..=x1 {
                let p = [x as f64, y as f64];
                let t = if len2 > 0.0 {
                    (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                let cx = a[0] + t * d[0];
                let cy = a[1] + t * d[1];
                if ((p[0] - cx).powi(2) + (p[1] - cy).powi(2)).sqrt() <= r {
                    mask.set(x, y, true);
                }
            }
        }
    }
    Ok(mask)
}

/// Zhang-Suen iterative thinning to a 1 px skeleton.
fn thin(mask: &MaskFrame) -> MaskFrame {
    let (w, h) = (mask.width, mask.height);
    let mut grid = mask.clone();
    let neighbor = |g: &MaskFrame, x: usize, y: usize| -> [bool; 8] {
        // p2..p9 clockwise from north
        let gx = |dx: isize, dy: isize| {
            let nx = x as isize + dx;
            let ny = y as isize + dy;
            nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h
                && g.get(nx as usize, ny as usize)
        };
        [
            gx(0, -1),
            gx(1, -1),
            gx(1, 0),
            gx(1, 1),
            gx(0, 1),
            gx(-1, 1),
            gx(-1, 0),
            gx(-1, -1),
        ]
    };
    loop {
        let mut changed = false;
        for pass in 0..2 {
            let mut to_clear = Vec::new();
            for y in 0..h {
                for x in 0..w {
                    if !grid.get(x, y) {
                        continue;
                    }
                    let p = neighbor(&grid, x, y);
                    let b: usize = p.iter().filter(|v| **v).count();
                    if !(2..=6).contains(&b) {
                        continue;
                    }
                    let a = (0..8).filter(|i| !p[*i] && p[(*i + 1) % 8]).count();
                    if a != 1 {
                        continue;
                    }
                    let (p2, p4, p6, p8) = (p[0], p[2], p[4], p[6]);
                    let cond = if pass == 0 {
                        !(p2 && p4 && p6) && !(p4 && p6 && p8)
                    } else {
                        !(p2 && p4 && p8) && !(p2 && p6 && p8)
                    };
                    if cond {
                        to_clear.push((x, y));
                    }
                }
            }
            if !to_clear.is_empty() {
                changed = true;
                for (x, y) in to_clear {
                    grid.set(x, y, false);
                }
            }
        }
        if !changed {
            return grid;
        }
    }
}

/// BFS over 8-connected skeleton pixels from `start`; returns the farthest
/// pixel (by hop count) and the path to it.
fn farthest_path(skel: &MaskFrame, start: (usize, usize)) -> ((usize, usize), Vec<(usize, usize)>) {
    let (w, h) = (skel.width, skel.height);
    let idx = |x: usize, y: usize| y * w + x;
    let mut prev = vec![usize::MAX; w * h];
    let mut seen = vec![false; w * h];
    let mut queue = std::collections::VecDeque::new();
    seen[idx(start.0, start.1)] = true;
    queue.push_back(start);
    let mut last = start;
    while let Some((x, y)) = queue.pop_front() {
        last = (x, y);
        for dy in -1_isize..=1 {
            for dx in -1_isize..=1 {
                if dx == 0 && dy == 0 {
                    continue;
                }
                let nx = x as isize + dx;
                let ny = y as isize + dy;
                if nx < 0 || ny < 0 || nx as usize >= w || ny as usize >= h {
                    continue;
                }
                let (nx, ny) = (nx as usize, ny as usize);
                if skel.get(nx, ny) && !seen[idx(nx, ny)] {
                    seen[idx(nx, ny)] = true;
                    prev[idx(nx, ny)] = idx(x, y);
                    queue.push_back((nx, ny));
                }
            }
        }
    }
    let mut path = vec![last];
    let mut cur = idx(last.0, last.1);
    while prev[cur] != usize::MAX {
        cur = prev[cur];
        path.push((cur % w, cur / w));
    }
    path.reverse();
    (last, path)
}

/// Extract an `n_points` centerline from a binary mask, ordered base to tip.
///
/// Thins the mask to a skeleton, picks the longest path (double BFS, exact
/// on tree-shaped skeletons), resamples it equidistantly in arc length, and
/// orients it so point 0 lies nearest the declared base edge. An empty mask
/// yields `None` (a missing-frame marker for later repair).
pub fn extract_centerline(
    mask: &MaskFrame,
    n_points: usize,
    base: BaseEdge,
) -> Result<Option<Vec<[f64; 2]>>> {
    if mask.is_empty_mask() {
        return Ok(None);
    }
    let skel = thin(mask);
    let start = (0..mask.height)
        .flat_map(|y| (0..mask.width).map(move |x| (x, y)))
        .find(|&(x, y)| skel.get(x, y))
        .expect("non-empty mask has non-empty skeleton");
    let (end_a, _) = farthest_path(&skel, start);
    let (_, path) = farthest_path(&skel, end_a);
    if path.len() < 3 {
        return Err(SysidError::DegenerateMask(format!(
            "skeleton path of {} px is too short",
            path.len()
        )));
    }
    let mut pts: Vec<[f64; 2]> = path.iter().map(|&(x, y)| [x as f64, y as f64]).collect();
    let flip = match base {
        BaseEdge::Left => pts.last().unwrap()[0] < pts[0][0],
        BaseEdge::Top => pts.last().unwrap()[1] < pts[0][1],
    };
    if flip {
        pts.reverse();
    }
    Ok(Some(crate::sim::resample_arc_length(&pts, n_points)))
}

/// Centroid of the largest HSV-matching connected component inside `roi`,
/// in full-frame coordinates; `None` when nothing matches.
pub fn track_marker(
    frame: &ColorFrame,
    range: &HsvRange,
    roi: Roi,
) -> Result<Option<[f64; 2]>> {
    if roi.width == 0
        || roi.height == 0
        || roi.x + roi.width > frame.width
        || roi.y + roi.height > frame.height
    {
        return Err(SysidError::Config(format!(
            "roi {}x{}+{}+{} outside {}x{} frame",
            roi.width, roi.height, roi.x, roi.y, frame.width, frame.height
        )));
    }
    let (w, h) = (roi.width, roi.height);
    let mut fg = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            fg[y * w + x] = range.contains(frame.get(roi.x + x, roi.y + y));
        }
    }
    // 8-connected component labeling; keep the largest
    let mut seen = vec![false; w * h];
    let mut best: Option<(usize, f64, f64)> = None;
    for start in 0..w * h {
        if !fg[start] || seen[start] {
            continue;
        }
        let mut queue = std::collections::VecDeque::from([start]);
        seen[start] = true;
        let (mut count, mut sx, mut sy) = (0usize, 0.0, 0.0);
        while let Some(i) = queue.pop_front() {
            let (x, y) = (i % w, i / w);
            count += 1;
            sx += x as f64;
            sy += y as f64;
            for dy in -1_isize..=1 {
                for dx in -1_isize..=1 {
                    let nx = x as isize + dx;
                    let ny = y as isize + dy;
                    if nx < 0 || ny < 0 || nx as usize >= w || ny as usize >= h {
                        continue;
                    }
                    let ni = ny as usize * w + nx as usize;
                    if fg[ni] && !seen[ni] {
                        seen[ni] = true;
                        queue.push_back(ni);
                    }
                }
            }
        }
        if best.map_or(true, |(c, _, _)| count > c) {
            best = Some((count, sx / count as f64, sy / count as f64));
        }
    }
    Ok(best.map(|(_, cx, cy)| [roi.x as f64 + cx, roi.y as f64 + cy]))
}

/// Fill missing frames by per-coordinate linear interpolation between the
/// nearest valid neighbors; leading and trailing gaps copy the nearest
/// valid frame. Identity on gap-free sequences.
pub fn interpolate_missing(seq: &[Option<Vec<[f64; 2]>>]) -> Result<Vec<Vec<[f64; 2]>>> {
    let valid: Vec<usize> = seq
        .iter()
        .enumerate()
        .filter_map(|(i, f)| f.is_some().then_some(i))
        .collect();
    if valid.is_empty() {
        return Err(SysidError::UnrecoverablePerception("all frames missing".into()));
    }
    let mut out = Vec::with_capacity(seq.len());
    for i in 0..seq.len() {
        if let Some(f) = &seq[i] {
            out.push(f.clone());
            continue;
        }
        let before = valid.iter().rev().find(|&&v| v < i);
        let after = valid.iter().find(|&&v| v > i);
        let frame = match (before, after) {
            (Some(&a), Some(&b)) => {
                let t = (i - a) as f64 / (b - a) as f64;
                let fa = seq[a].as_ref().unwrap();
                let fb = seq[b].as_ref().unwrap();
                if fa.len() != fb.len() {
                    return Err(SysidError::UnrecoverablePerception(
                        "point count changed across a gap".into(),
                    ));
                }
                fa.iter()
                    .zip(fb)
                    .map(|(p, q)| [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])])
                    .collect()
            }
            (None, Some(&b)) => seq[b].as_ref().unwrap().clone(),
            (Some(&a), None) => seq[a].as_ref().unwrap().clone(),
            (None, None) => unreachable!("valid is non-empty"),
        };
        out.push(frame);
    }
    Ok(out)
}

/// Per-frame centerline extraction followed by gap repair.
pub fn extract_centerline_sequence(
    masks: &[MaskFrame],
    n_points: usize,
    base: BaseEdge,
) -> Result<Vec<Vec<[f64; 2]>>> {
    let per_frame: Result<Vec<_>> =
        masks.iter().map(|m| extract_centerline(m, n_points, base)).collect();
    interpolate_missing(&per_frame?)
}

#[derive(Debug, Serialize, Deserialize)]
struct MaskIndex {
    fps: f64,
    width: usize,
    height: usize,
    files: Vec<String>,
}

/// Export masks as binary PGM files plus an `index.json` with fps and
/// dimensions. This is the bridge format for externally produced masks.
pub fn write_mask_sequence(dir: &Path, masks: &[MaskFrame], fps: f64) -> Result<()> {
    if masks.is_empty() {
        return Err(SysidError::DegenerateInput("no masks to write".into()));
    }
    std::fs::create_dir_all(dir)?;
    let (w, h) = (masks[0].width, masks[0].height);
    let mut files = Vec::with_capacity(masks.len());
    for (i, m) in masks.iter().enumerate() {
        if m.width != w || m.height != h {
            return Err(SysidError::DegenerateInput("mask dimensions vary across frames".into()));
        }
        let name = format!("frame_{i:05}.pgm");
        let mut buf = format!("P5\n{w} {h}\n255\n").into_bytes();
        buf.extend((0..h).flat_map(|y| (0..w).map(move |x| if m.get(x, y) { 255u8 } else { 0 })));
        std::fs::write(dir.join(&name), buf)?;
        files.push(name);
    }
    let index = MaskIndex { fps, width: w, height: h, files };
    std::fs::write(dir.join("index.json"), serde_json::to_string_pretty(&index)?)?;
    Ok(())
}

/// Read a mask sequence written by [`write_mask_sequence`] (or an external
/// segmenter following the same layout). Returns the masks and their fps.
pub fn read_mask_sequence(dir: &Path) -> Result<(Vec<MaskFrame>, f64)> {
    let index: MaskIndex =
        serde_json::from_str(&std::fs::read_to_string(dir.join("index.json"))?)?;
    let mut masks = Vec::with_capacity(index.files.len());
    for name in &index.files {
        let data = std::fs::read(dir.join(name))?;
        masks.push(parse_pgm(&data, index.width, index.height)?);
    }
    Ok((masks, index.fps))
}

fn parse_pgm(data: &[u8], want_w: usize, want_h: usize) -> Result<MaskFrame> {
    let bad = |m: &str| SysidError::Serde(format!("bad PGM: {m}"));
    let mut fields = Vec::new();
    let mut pos = 0;
    // header: magic, width, height, maxval as whitespace-separated tokens
    while fields.len() < 4 && pos < data.len() {
        while pos < data.len() && data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < data.len() && data[pos] == b'#' {
            while pos < data.len() && data[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < data.len() && !data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        fields.push(std::str::from_utf8(&data[start..pos]).map_err(|_| bad("non-utf8 header"))?);
    }
    if fields.len() < 4 || fields[0] != "P5" {
        return Err(bad("expected P5 header"));
    }
    let w: usize = fields[1].parse().map_err(|_| bad("width"))?;
    let h: usize = fields[2].parse().map_err(|_| bad("height"))?;
    if w != want_w || h != want_h {
        return Err(bad("dimensions disagree with index"));
    }
    pos += 1; // single whitespace byte after maxval
    if data.len() < pos + w * h {
        return Err(bad("truncated pixel data"));
    }
    let mut mask = MaskFrame::new(w, h);
    for y in 0..h {
        for x in 0..w {
            mask.set(x, y, data[pos + y * w + x] > 127);
        }
    }
    Ok(mask)
}
