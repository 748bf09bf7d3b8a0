//! Binary PPM rendering of an occupancy grid with an optional base trajectory
//! and point markers. North is up; one pixel per cell.

use crate::executive::TraceEvent;
use crate::mapping::{Cell, OccupancyGrid};

pub type Rgb = [u8; 3];

pub const TRAJECTORY: Rgb = [220, 30, 30];
pub const OBJECT: Rgb = [20, 170, 40];
pub const DROP: Rgb = [30, 60, 220];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overlay {
    pub trajectory: Vec<(f64, f64)>,
    pub markers: Vec<((f64, f64), Rgb)>,
}

/// Base positions recorded with each LiDAR sweep, in trace order.
pub fn trajectory_from_trace(trace: &[TraceEvent]) -> Vec<(f64, f64)> {
    trace
        .iter()
        .filter(|e| e.kind == "lidar")
        .filter_map(|e| {
            let p = e.payload.get("pose")?;
            Some((p.get("x")?.as_f64()?, p.get("y")?.as_f64()?))
        })
        .collect()
}

/// Raster image: row-major RGB, top row is the grid's highest y.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<Rgb>,
}

impl Image {
    pub fn get(&self, col: usize, row: usize) -> Rgb {
        self.pixels[row * self.width + col]
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.reserve(self.pixels.len() * 3);
        for p in &self.pixels {
            out.extend_from_slice(p);
        }
        out
    }
}

/// Pixel (col, row) of a grid cell, if the cell is inside the grid.
pub fn cell_pixel(grid: &OccupancyGrid, c: Cell) -> Option<(usize, usize)> {
    grid.in_bounds(c).then(|| (c.0 as usize, grid.height - 1 - c.1 as usize))
}

pub fn render(grid: &OccupancyGrid, overlay: &Overlay) -> Image {
    let mut img = Image {
        width: grid.width,
        height: grid.height,
        pixels: vec![[0, 0, 0]; grid.width * grid.height],
    };
    for j in 0..grid.height {
        for i in 0..grid.width {
            let p = grid.probability_at((i as i64, j as i64));
            let g = (255.0 * (1.0 - p)).round() as u8;
            let (col, row) = cell_pixel(grid, (i as i64, j as i64)).expect("cell in grid");
            img.pixels[row * grid.width + col] = [g, g, g];
        }
    }
    for w in overlay.trajectory.windows(2) {
        for c in line_cells(grid, w[0], w[1]) {
            if let Some((col, row)) = cell_pixel(grid, c) {
                img.pixels[row * grid.width + col] = TRAJECTORY;
            }
        }
    }
    if let [only] = overlay.trajectory.as_slice() {
        if let Some((col, row)) = cell_pixel(grid, grid.world_to_cell(nalgebra::Vector2::new(only.0, only.1))) {
            img.pixels[row * grid.width + col] = TRAJECTORY;
        }
    }
    for &((x, y), color) in &overlay.markers {
        let c = grid.world_to_cell(nalgebra::Vector2::new(x, y));
        for dj in -1..=1 {
            for di in -1..=1 {
                if let Some((col, row)) = cell_pixel(grid, (c.0 + di, c.1 + dj)) {
                    img.pixels[row * grid.width + col] = color;
                }
            }
        }
    }
    img
}

/// Cells crossed by the segment, via the grid's own traversal.
fn line_cells(grid: &OccupancyGrid, a: (f64, f64), b: (f64, f64)) -> Vec<Cell> {
    let (cells, _) = grid.traverse(nalgebra::Vector2::new(a.0, a.1), nalgebra::Vector2::new(b.0, b.1));
    cells
}
