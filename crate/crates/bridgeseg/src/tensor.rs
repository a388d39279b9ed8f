//! Dense grid types shared by every stage of the pipeline.
//!
//! [`ImageTensor`] is the universal carrier for images, probability maps,
//! reverse distance maps, and 6-channel bridge states. Data is stored as
//! channel planes (`c`-major, then row-major within a plane), which keeps
//! the convolution and per-channel loops contiguous.

use crate::error::{Error, Result};

/// Dense H×W×C float32 grid, stored as C contiguous H×W planes.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    h: usize,
    w: usize,
    c: usize,
    data: Vec<f32>,
}

impl ImageTensor {
    pub fn zeros(h: usize, w: usize, c: usize) -> Self {
        assert!(h > 0 && w > 0 && c > 0, "tensor dimensions must be positive");
        Self {
            h,
            w,
            c,
            data: vec![0.0; h * w * c],
        }
    }

    pub fn constant(h: usize, w: usize, c: usize, value: f32) -> Self {
        let mut t = Self::zeros(h, w, c);
        t.data.fill(value);
        t
    }

    /// Builds a tensor by evaluating `f(y, x, channel)` at every cell.
    pub fn from_fn(h: usize, w: usize, c: usize, mut f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        let mut t = Self::zeros(h, w, c);
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    t.data[ch * h * w + y * w + x] = f(y, x, ch);
                }
            }
        }
        t
    }

    /// Wraps an existing plane-major buffer. `data.len()` must equal `h*w*c`.
    pub fn from_planes(h: usize, w: usize, c: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != h * w * c {
            return Err(Error::Shape {
                context: "ImageTensor::from_planes",
                expected: format!("{} values for {h}x{w}x{c}", h * w * c),
                got: format!("{}", data.len()),
            });
        }
        Ok(Self { h, w, c, data })
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn channels(&self) -> usize {
        self.c
    }

    /// (height, width, channels)
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.h, self.w, self.c)
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[c * self.h * self.w + y * self.w + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        self.data[c * self.h * self.w + y * self.w + x] = v;
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let hw = self.h * self.w;
        &self.data[c * hw..(c + 1) * hw]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f32] {
        let hw = self.h * self.w;
        &mut self.data[c * hw..(c + 1) * hw]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.shape() == other.shape()
    }

    pub fn ensure_same_shape(&self, other: &Self, context: &'static str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Shape {
                context,
                expected: format!("{:?}", self.shape()),
                got: format!("{:?}", other.shape()),
            })
        }
    }

    pub fn ensure_channels(&self, c: usize, context: &'static str) -> Result<()> {
        if self.c == c {
            Ok(())
        } else {
            Err(Error::Shape {
                context,
                expected: format!("{c} channels"),
                got: format!("{} channels", self.c),
            })
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> f32 {
        assert!(self.same_shape(other));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }
}

/// H×W binary mask; 0 = background, 1 = foreground.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    h: usize,
    w: usize,
    data: Vec<u8>,
}

impl BinaryMask {
    pub fn zeros(h: usize, w: usize) -> Self {
        Self {
            h,
            w,
            data: vec![0; h * w],
        }
    }

    pub fn from_fn(h: usize, w: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut m = Self::zeros(h, w);
        for y in 0..h {
            for x in 0..w {
                m.data[y * w + x] = u8::from(f(y, x));
            }
        }
        m
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.w + x] != 0
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.data[y * self.w + x] = u8::from(v);
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn count_foreground(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }
}

/// H×W non-negative integer grid; 0 = background, k ≥ 1 = instance id k.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceLabelMap {
    h: usize,
    w: usize,
    data: Vec<u32>,
}

impl InstanceLabelMap {
    pub fn zeros(h: usize, w: usize) -> Self {
        Self {
            h,
            w,
            data: vec![0; h * w],
        }
    }

    pub fn from_raw(h: usize, w: usize, data: Vec<u32>) -> Result<Self> {
        if data.len() != h * w {
            return Err(Error::Shape {
                context: "InstanceLabelMap::from_raw",
                expected: format!("{} values for {h}x{w}", h * w),
                got: format!("{}", data.len()),
            });
        }
        Ok(Self { h, w, data })
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> u32 {
        self.data[y * self.w + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: u32) {
        self.data[y * self.w + x] = v;
    }

    pub fn data(&self) -> &[u32] {
        &self.data
    }

    pub fn max_id(&self) -> u32 {
        self.data.iter().copied().max().unwrap_or(0)
    }

    /// Sorted list of instance ids present in the map (background excluded).
    pub fn instance_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.data.iter().copied().filter(|&v| v != 0).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn contains_id(&self, k: u32) -> bool {
        k != 0 && self.data.contains(&k)
    }

    /// True when instance ids are exactly 1..=max with no gaps.
    pub fn ids_dense(&self) -> bool {
        let ids = self.instance_ids();
        ids.iter()
            .enumerate()
            .all(|(i, &id)| id == (i + 1) as u32)
    }

    pub fn foreground(&self) -> BinaryMask {
        let mut m = BinaryMask::zeros(self.h, self.w);
        for (dst, &src) in m.data.iter_mut().zip(&self.data) {
            *dst = u8::from(src != 0);
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plane_layout_is_channel_major() {
        let mut t = ImageTensor::zeros(2, 3, 2);
        t.set(1, 2, 1, 7.0);
        assert_eq!(t.plane(1)[1 * 3 + 2], 7.0);
        assert_eq!(t.data()[2 * 3 + 1 * 3 + 2], 7.0);
    }

    #[test]
    fn from_planes_rejects_wrong_length() {
        assert!(ImageTensor::from_planes(2, 2, 1, vec![0.0; 3]).is_err());
    }

    #[test]
    fn label_map_ids() {
        let mut m = InstanceLabelMap::zeros(2, 2);
        m.set(0, 0, 2);
        m.set(1, 1, 1);
        assert_eq!(m.instance_ids(), vec![1, 2]);
        assert!(m.ids_dense());
        m.set(1, 1, 3);
        assert!(!m.ids_dense());
        assert!(m.contains_id(2));
        assert!(!m.contains_id(4));
    }
}
