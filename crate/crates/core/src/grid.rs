//! Row-major raster container.
//!
//! Pixel `(x, y)` is sampled at the integer coordinate `(x, y)`; its footprint
//! is `[x − 0.5, x + 0.5] × [y − 0.5, y + 0.5]`. Every module (rendering,
//! Voronoi labels, basin offsets, bilinear sampling) uses this convention.

#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

/// Grayscale image with intensities in `[0, 1]`.
pub type GrayImage = Grid<f64>;

impl<T: Clone> Grid<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self { width, height, data: vec![value; width * height] }
    }
}

impl<T> Grid<T> {
    /// Panics if `data.len() != width * height`.
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), width * height, "grid data length mismatch");
        Self { width, height, data }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> &T {
        &self.data[y * self.width + x]
    }

    #[inline]
    pub fn get_mut(&mut self, x: usize, y: usize) -> &mut T {
        let w = self.width;
        &mut self.data[y * w + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: T) {
        let w = self.width;
        self.data[y * w + x] = v;
    }

    #[inline]
    pub fn contains(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn same_shape<U>(&self, other: &Grid<U>) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid { width: self.width, height: self.height, data: self.data.iter().map(f).collect() }
    }

    /// 4-connected neighbors of `(x, y)` in the order left, right, up, down.
    pub fn neighbors4(&self, x: usize, y: usize) -> impl Iterator<Item = (usize, usize)> {
        let (w, h) = (self.width, self.height);
        let cands = [
            (x.wrapping_sub(1), y),
            (x + 1, y),
            (x, y.wrapping_sub(1)),
            (x, y + 1),
        ];
        cands.into_iter().filter(move |&(nx, ny)| nx < w && ny < h)
    }
}

impl Grid<f64> {
    /// Value at `(x, y)` with coordinates clamped to the grid.
    #[inline]
    pub fn get_clamped(&self, x: i64, y: i64) -> f64 {
        let cx = x.clamp(0, self.width as i64 - 1) as usize;
        let cy = y.clamp(0, self.height as i64 - 1) as usize;
        self.data[cy * self.width + cx]
    }

    /// Bilinear interpolation; pixels outside the grid contribute zero.
    pub fn bilinear_zero(&self, x: f64, y: f64) -> f64 {
        let x0 = x.floor();
        let y0 = y.floor();
        let (fx, fy) = (x - x0, y - y0);
        let (ix, iy) = (x0 as i64, y0 as i64);
        let at = |px: i64, py: i64| -> f64 {
            if self.contains(px, py) {
                self.data[py as usize * self.width + px as usize]
            } else {
                0.0
            }
        };
        let mut v = 0.0;
        // Skip zero-weight taps so integer-aligned samples reproduce exactly.
        if fx < 1.0 && fy < 1.0 {
            v += (1.0 - fx) * (1.0 - fy) * at(ix, iy);
        }
        if fx > 0.0 {
            v += fx * (1.0 - fy) * at(ix + 1, iy);
        }
        if fy > 0.0 {
            v += (1.0 - fx) * fy * at(ix, iy + 1);
        }
        if fx > 0.0 && fy > 0.0 {
            v += fx * fy * at(ix + 1, iy + 1);
        }
        v
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Separable convolution with a symmetric 1D kernel, replicating border
    /// pixels.
    pub fn convolve_separable(&self, kernel: &[f64]) -> Grid<f64> {
        let r = (kernel.len() / 2) as i64;
        let mut tmp = Grid::filled(self.width, self.height, 0.0);
        for y in 0..self.height {
            for x in 0..self.width {
                let mut s = 0.0;
                for (k, &wgt) in kernel.iter().enumerate() {
                    s += wgt * self.get_clamped(x as i64 + k as i64 - r, y as i64);
                }
                tmp.set(x, y, s);
            }
        }
        let mut out = Grid::filled(self.width, self.height, 0.0);
        for y in 0..self.height {
            for x in 0..self.width {
                let mut s = 0.0;
                for (k, &wgt) in kernel.iter().enumerate() {
                    s += wgt * tmp.get_clamped(x as i64, y as i64 + k as i64 - r);
                }
                out.set(x, y, s);
            }
        }
        out
    }
}

/// Normalized sampled Gaussian kernel of `2 * radius + 1` taps.
pub fn gaussian_kernel(sigma: f64, radius: usize) -> Vec<f64> {
    let r = radius as i64;
    let mut k: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}
