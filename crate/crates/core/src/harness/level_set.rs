//! Zero level sets by marching squares over the interior nodes.

use std::collections::HashMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::spectral::NodalField;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Polyline {
    pub points: Vec<[f64; 2]>,
    /// First and last points coincide in the traversal (the closing point is not repeated).
    pub closed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelSet {
    pub time: f64,
    pub polylines: Vec<Polyline>,
}

impl LevelSet {
    pub fn vertex_count(&self) -> usize {
        self.polylines.iter().map(|p| p.points.len()).sum()
    }

    /// Mean distance of all vertices from `centre`.
    pub fn mean_radius(&self, centre: [f64; 2]) -> Option<f64> {
        let n = self.vertex_count();
        if n == 0 {
            return None;
        }
        let s: f64 = self
            .polylines
            .iter()
            .flat_map(|p| p.points.iter())
            .map(|q| ((q[0] - centre[0]).powi(2) + (q[1] - centre[1]).powi(2)).sqrt())
            .sum();
        Some(s / n as f64)
    }

    pub fn to_csv_rows(&self, out: &mut String) {
        let t = super::fmt_time(self.time);
        for (id, line) in self.polylines.iter().enumerate() {
            let mut pts = line.points.clone();
            if line.closed {
                if let Some(&p) = pts.first() {
                    pts.push(p);
                }
            }
            for p in pts {
                out.push_str(&format!("{t},{id},{:.12},{:.12}\n", p[0], p[1]));
            }
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("time,polyline_id,x1,x2\n");
        self.to_csv_rows(&mut s);
        s
    }
}

/// Edge of the node lattice: `(axis, i, j)` joins node `(i, j)` with its
/// neighbour along `axis`.
type EdgeKey = (u8, usize, usize);

pub fn extract_zero_level_set(field: &NodalField, time: f64) -> Result<LevelSet> {
    let grid = field.grid();
    if grid.dim() != 2 {
        return Err(Error::Dimension("level sets need d = 2".into()));
    }
    let v = field.values();
    let n = grid.nodes();
    let h = grid.spec().spacing();
    let pos = |i: usize, j: usize| v[(i, j)] >= 0.0;

    let point = |e: EdgeKey| -> [f64; 2] {
        let (a, i, j) = e;
        let (i2, j2) = if a == 0 { (i + 1, j) } else { (i, j + 1) };
        let (va, vb) = (v[(i, j)], v[(i2, j2)]);
        let s = if va == vb { 0.5 } else { va / (va - vb) };
        let s = s.clamp(0.0, 1.0);
        let x = (i + 1) as f64 * h;
        let y = (j + 1) as f64 * h;
        if a == 0 { [x + s * h, y] } else { [x, y + s * h] }
    };

    let mut segments: Vec<(EdgeKey, EdgeKey)> = Vec::new();
    for i in 0..n.saturating_sub(1) {
        for j in 0..n.saturating_sub(1) {
            let c = [pos(i, j), pos(i + 1, j), pos(i + 1, j + 1), pos(i, j + 1)];
            let bottom = (0, i, j);
            let right = (1, i + 1, j);
            let top = (0, i, j + 1);
            let left = (1, i, j);
            let mut cut = Vec::with_capacity(4);
            if c[0] != c[1] {
                cut.push(bottom);
            }
            if c[1] != c[2] {
                cut.push(right);
            }
            if c[2] != c[3] {
                cut.push(top);
            }
            if c[3] != c[0] {
                cut.push(left);
            }
            match cut.len() {
                0 => {}
                2 => segments.push((cut[0], cut[1])),
                4 => {
                    let centre = 0.25 * (v[(i, j)] + v[(i + 1, j)] + v[(i + 1, j + 1)] + v[(i, j + 1)]);
                    if (centre >= 0.0) == c[0] {
                        segments.push((bottom, right));
                        segments.push((top, left));
                    } else {
                        segments.push((bottom, left));
                        segments.push((right, top));
                    }
                }
                _ => unreachable!("a cell has an even number of sign changes"),
            }
        }
    }

    let mut adj: HashMap<EdgeKey, Vec<usize>> = HashMap::new();
    for (s, (a, b)) in segments.iter().enumerate() {
        adj.entry(*a).or_default().push(s);
        adj.entry(*b).or_default().push(s);
    }
    let mut used = vec![false; segments.len()];
    let mut polylines = Vec::new();

    let walk = |start: EdgeKey, used: &mut Vec<bool>| -> (Vec<EdgeKey>, bool) {
        let mut keys = vec![start];
        let mut cur = start;
        loop {
            let next = adj[&cur].iter().copied().find(|&s| !used[s]);
            let Some(s) = next else { break };
            used[s] = true;
            let (a, b) = segments[s];
            cur = if a == cur { b } else { a };
            if cur == start {
                return (keys, true);
            }
            keys.push(cur);
        }
        (keys, false)
    };

    // open chains start at endpoints; scan in segment order for determinism
    for s in 0..segments.len() {
        for end in [segments[s].0, segments[s].1] {
            if adj[&end].len() == 1 && !used[adj[&end][0]] {
                let (keys, closed) = walk(end, &mut used);
                polylines.push(Polyline { points: keys.into_iter().map(point).collect(), closed });
            }
        }
    }
    for s in 0..segments.len() {
        if !used[s] {
            let (keys, closed) = walk(segments[s].0, &mut used);
            polylines.push(Polyline { points: keys.into_iter().map(point).collect(), closed });
        }
    }
    Ok(LevelSet { time, polylines })
}
