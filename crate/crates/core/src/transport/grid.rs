//! Two-step halo exchange for images split over a 2D grid of tiles: first
//! along the horizontal axis, then along the vertical axis with the
//! horizontally extended rows, so corner pixels arrive without diagonal
//! messages.

use std::collections::BTreeMap;

use super::endpoint::Endpoint;
use crate::error::{Error, Result};
use crate::hypergraph::grid_range;

pub const GRID_HORIZONTAL: u32 = u32::MAX - 1;
pub const GRID_VERTICAL: u32 = u32::MAX - 2;

/// Tile layout of an `height x width` image over `rows x cols` workers
/// with halo depth `halo_r` (vertical) and `halo_c` (horizontal).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridGeometry {
    pub height: usize,
    pub width: usize,
    pub rows: usize,
    pub cols: usize,
    pub halo_r: usize,
    pub halo_c: usize,
}

/// Half-open pixel rectangle `[r0, r1) x [c0, c1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub r0: usize,
    pub r1: usize,
    pub c0: usize,
    pub c1: usize,
}

impl Rect {
    pub fn height(&self) -> usize {
        self.r1 - self.r0
    }

    pub fn width(&self) -> usize {
        self.c1 - self.c0
    }

    pub fn contains(&self, r: usize, c: usize) -> bool {
        (self.r0..self.r1).contains(&r) && (self.c0..self.c1).contains(&c)
    }

    /// Row-major index of pixel `(r, c)` inside the rectangle.
    pub fn index(&self, r: usize, c: usize) -> usize {
        (r - self.r0) * self.width() + (c - self.c0)
    }
}

impl GridGeometry {
    pub fn new(
        height: usize,
        width: usize,
        rows: usize,
        cols: usize,
        halo_r: usize,
        halo_c: usize,
    ) -> Result<Self> {
        if rows == 0 || cols == 0 || rows > height || cols > width {
            return Err(Error::InvalidParameter(format!(
                "cannot split {height}x{width} pixels into a {rows}x{cols} worker grid"
            )));
        }
        let g = Self {
            height,
            width,
            rows,
            cols,
            halo_r,
            halo_c,
        };
        for k in 0..rows * cols {
            let t = g.tile(k);
            let need_r = if rows > 1 { halo_r } else { 0 };
            let need_c = if cols > 1 { halo_c } else { 0 };
            if t.height() < need_r || t.width() < need_c {
                return Err(Error::TileTooSmall {
                    tile_rows: t.height(),
                    tile_cols: t.width(),
                    halo: need_r.max(need_c),
                });
            }
        }
        Ok(g)
    }

    pub fn coords(&self, k: usize) -> (usize, usize) {
        (k / self.cols, k % self.cols)
    }

    pub fn tile(&self, k: usize) -> Rect {
        let (kr, kc) = self.coords(k);
        let (r0, r1) = grid_range(self.height, self.rows, kr);
        let (c0, c1) = grid_range(self.width, self.cols, kc);
        Rect { r0, r1, c0, c1 }
    }

    /// Tile grown by the halo depths, clipped to the image.
    pub fn extended(&self, k: usize) -> Rect {
        let t = self.tile(k);
        Rect {
            r0: t.r0.saturating_sub(self.halo_r),
            r1: (t.r1 + self.halo_r).min(self.height),
            c0: t.c0.saturating_sub(self.halo_c),
            c1: (t.c1 + self.halo_c).min(self.width),
        }
    }

    fn neighbor(&self, k: usize, dr: isize, dc: isize) -> Option<usize> {
        let (kr, kc) = self.coords(k);
        let r = kr as isize + dr;
        let c = kc as isize + dc;
        (r >= 0 && c >= 0 && (r as usize) < self.rows && (c as usize) < self.cols)
            .then(|| r as usize * self.cols + c as usize)
    }
}

fn extract(src: &[f64], src_rect: Rect, part: Rect) -> Vec<f64> {
    let mut out = Vec::with_capacity(part.height() * part.width());
    for r in part.r0..part.r1 {
        let start = src_rect.index(r, part.c0);
        out.extend_from_slice(&src[start..start + part.width()]);
    }
    out
}

fn place(dst: &mut [f64], dst_rect: Rect, part: Rect, values: &[f64]) {
    for (i, r) in (part.r0..part.r1).enumerate() {
        let start = dst_rect.index(r, part.c0);
        dst[start..start + part.width()]
            .copy_from_slice(&values[i * part.width()..(i + 1) * part.width()]);
    }
}

/// Exchanges halos of the owned tile (row-major) and returns the extended
/// tile (row-major over [`GridGeometry::extended`]).
pub fn grid_halo_exchange(
    ep: &mut Endpoint,
    g: &GridGeometry,
    t: u64,
    tile: &[f64],
) -> Result<Vec<f64>> {
    let k = ep.rank();
    let own = g.tile(k);
    let ext = g.extended(k);
    if tile.len() != own.height() * own.width() {
        return Err(Error::DimensionMismatch {
            expected: own.height() * own.width(),
            actual: tile.len(),
        });
    }
    let mut out = vec![0.0; ext.height() * ext.width()];
    place(&mut out, ext, own, tile);

    // Horizontal step over the owned rows.
    let left = g.neighbor(k, 0, -1);
    let right = g.neighbor(k, 0, 1);
    let mut send = BTreeMap::new();
    let mut expect = BTreeMap::new();
    let rows = |c0: usize, c1: usize| Rect {
        r0: own.r0,
        r1: own.r1,
        c0,
        c1,
    };
    if let Some(l) = left {
        send.insert(l, extract(tile, own, rows(own.c0, own.c0 + g.halo_c)));
        expect.insert(l, own.height() * (own.c0 - ext.c0));
    }
    if let Some(r) = right {
        send.insert(r, extract(tile, own, rows(own.c1 - g.halo_c, own.c1)));
        expect.insert(r, own.height() * (ext.c1 - own.c1));
    }
    let got = ep.halo_exchange(t, GRID_HORIZONTAL, send, &expect)?;
    if let Some(l) = left {
        place(&mut out, ext, rows(ext.c0, own.c0), &got[&l]);
    }
    if let Some(r) = right {
        place(&mut out, ext, rows(own.c1, ext.c1), &got[&r]);
    }

    // Vertical step over the horizontally extended columns.
    let up = g.neighbor(k, -1, 0);
    let down = g.neighbor(k, 1, 0);
    let mut send = BTreeMap::new();
    let mut expect = BTreeMap::new();
    let cols = |r0: usize, r1: usize| Rect {
        r0,
        r1,
        c0: ext.c0,
        c1: ext.c1,
    };
    if let Some(u) = up {
        send.insert(u, extract(&out, ext, cols(own.r0, own.r0 + g.halo_r)));
        expect.insert(u, ext.width() * (own.r0 - ext.r0));
    }
    if let Some(d) = down {
        send.insert(d, extract(&out, ext, cols(own.r1 - g.halo_r, own.r1)));
        expect.insert(d, ext.width() * (ext.r1 - own.r1));
    }
    let got = ep.halo_exchange(t, GRID_VERTICAL, send, &expect)?;
    if let Some(u) = up {
        place(&mut out, ext, cols(ext.r0, own.r0), &got[&u]);
    }
    if let Some(d) = down {
        place(&mut out, ext, cols(own.r1, ext.r1), &got[&d]);
    }
    Ok(out)
}
