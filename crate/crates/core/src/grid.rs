use serde::{Deserialize, Serialize};

/// Row-major `height x width` raster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }
}

impl<T> Grid<T> {
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Option<Self> {
        (data.len() == width * height).then_some(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn same_shape<U>(&self, other: &Grid<U>) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn get(&self, col: usize, row: usize) -> &T {
        &self.data[row * self.width + col]
    }

    pub fn get_mut(&mut self, col: usize, row: usize) -> &mut T {
        &mut self.data[row * self.width + col]
    }

    /// Pixel containing the continuous point `(x, y)`, if inside the raster.
    pub fn at(&self, x: f64, y: f64) -> Option<&T> {
        let (c, r) = (x.round(), y.round());
        if c < 0.0 || r < 0.0 || c >= self.width as f64 || r >= self.height as f64 {
            return None;
        }
        Some(self.get(c as usize, r as usize))
    }

    pub fn row(&self, row: usize) -> &[T] {
        &self.data[row * self.width..(row + 1) * self.width]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn iter_indexed(&self) -> impl Iterator<Item = (usize, usize, &T)> {
        let w = self.width;
        self.data
            .iter()
            .enumerate()
            .map(move |(i, v)| (i % w, i / w, v))
    }
}

/// Summed-area table for O(1) box sums.
#[derive(Debug, Clone)]
pub struct Integral {
    width: usize,
    height: usize,
    sums: Vec<f64>,
}

impl Integral {
    pub fn new(width: usize, height: usize, value: impl Fn(usize, usize) -> f64) -> Self {
        let stride = width + 1;
        let mut sums = vec![0.0; stride * (height + 1)];
        for r in 0..height {
            let mut acc = 0.0;
            for c in 0..width {
                acc += value(c, r);
                sums[(r + 1) * stride + c + 1] = sums[r * stride + c + 1] + acc;
            }
        }
        Self {
            width,
            height,
            sums,
        }
    }

    /// Sum over the clamped inclusive box `[c0, c1] x [r0, r1]`, plus its pixel count.
    pub fn box_sum(&self, c0: i64, r0: i64, c1: i64, r1: i64) -> (f64, usize) {
        let c0 = c0.clamp(0, self.width as i64) as usize;
        let r0 = r0.clamp(0, self.height as i64) as usize;
        let c1 = (c1 + 1).clamp(0, self.width as i64) as usize;
        let r1 = (r1 + 1).clamp(0, self.height as i64) as usize;
        if c1 <= c0 || r1 <= r0 {
            return (0.0, 0);
        }
        let s = self.width + 1;
        let v = self.sums[r1 * s + c1] - self.sums[r0 * s + c1] - self.sums[r1 * s + c0]
            + self.sums[r0 * s + c0];
        (v, (c1 - c0) * (r1 - r0))
    }
}
