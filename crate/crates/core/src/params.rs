//! Flat parameter storage with a named group layout.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::Matrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LayoutError {
    #[error("layout mismatch: {0}")]
    Mismatch(String),
    #[error("unknown parameter group `{0}`")]
    UnknownGroup(String),
    #[error("invalid layout: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Matrix { rows: usize, cols: usize },
    Vector { len: usize },
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Matrix { rows, cols } => rows * cols,
            Shape::Vector { len } => len,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Matrix view of the group; vectors are read as a single row.
    pub fn as_matrix_dims(&self) -> (usize, usize) {
        match *self {
            Shape::Matrix { rows, cols } => (rows, cols),
            Shape::Vector { len } => (1, len),
        }
    }

    pub fn is_matrix(&self) -> bool {
        matches!(self, Shape::Matrix { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Group {
    pub name: String,
    pub shape: Shape,
    pub offset: usize,
}

impl Group {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.shape.len()
    }
}

/// Ordered, contiguous parameter groups.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    groups: Vec<Group>,
    len: usize,
}

impl Layout {
    pub fn new<S: Into<String>>(groups: impl IntoIterator<Item = (S, Shape)>) -> Result<Self, LayoutError> {
        let mut out = Vec::new();
        let mut offset = 0;
        for (name, shape) in groups {
            let name = name.into();
            if shape.is_empty() {
                return Err(LayoutError::Invalid(format!("group `{name}` is empty")));
            }
            if out.iter().any(|g: &Group| g.name == name) {
                return Err(LayoutError::Invalid(format!("duplicate group `{name}`")));
            }
            out.push(Group { name, shape, offset });
            offset += shape.len();
        }
        if out.is_empty() {
            return Err(LayoutError::Invalid("layout has no groups".into()));
        }
        Ok(Self { groups: out, len: offset })
    }

    /// Single vector group named `theta`.
    pub fn flat(len: usize) -> Result<Self, LayoutError> {
        Self::new([("theta", Shape::Vector { len })])
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    pub fn index_of(&self, name: &str) -> Result<usize, LayoutError> {
        self.groups
            .iter()
            .position(|g| g.name == name)
            .ok_or_else(|| LayoutError::UnknownGroup(name.to_string()))
    }

    /// Sub-layout holding only `indices`, repacked contiguously in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Layout, LayoutError> {
        Layout::new(indices.iter().map(|&i| {
            let g = &self.groups[i];
            (g.name.clone(), g.shape)
        }))
    }
}

/// Parameters (or gradients) stored flat, addressed through a shared [`Layout`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    layout: Arc<Layout>,
    data: Vec<f64>,
}

impl ParamVector {
    pub fn zeros(layout: Arc<Layout>) -> Self {
        let data = vec![0.0; layout.len()];
        Self { layout, data }
    }

    pub fn from_vec(layout: Arc<Layout>, data: Vec<f64>) -> Result<Self, LayoutError> {
        if data.len() != layout.len() {
            return Err(LayoutError::Mismatch(format!(
                "layout has {} entries, data has {}",
                layout.len(),
                data.len()
            )));
        }
        Ok(Self { layout, data })
    }

    /// Convenience: a single flat vector group.
    pub fn flat(data: Vec<f64>) -> Self {
        let layout = Arc::new(Layout::flat(data.len().max(1)).expect("non-empty"));
        let mut data = data;
        data.resize(layout.len(), 0.0);
        Self { layout, data }
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn group(&self, index: usize) -> &[f64] {
        &self.data[self.layout.groups[index].range()]
    }

    pub fn group_mut(&mut self, index: usize) -> &mut [f64] {
        let range = self.layout.groups[index].range();
        &mut self.data[range]
    }

    pub fn group_matrix(&self, index: usize) -> Matrix {
        let (r, c) = self.layout.groups[index].shape.as_matrix_dims();
        Matrix::from_vec(r, c, self.group(index).to_vec()).expect("group dims are positive")
    }

    pub fn same_layout(&self, other: &ParamVector) -> bool {
        Arc::ptr_eq(&self.layout, &other.layout) || *self.layout == *other.layout
    }

    pub fn check_layout(&self, layout: &Layout) -> Result<(), LayoutError> {
        if *self.layout != *layout {
            return Err(LayoutError::Mismatch("parameter layouts differ".into()));
        }
        Ok(())
    }

    pub fn dot(&self, other: &ParamVector) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    pub fn scaled(&self, s: f64) -> ParamVector {
        ParamVector {
            layout: self.layout.clone(),
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn axpy(&mut self, a: f64, x: &ParamVector) {
        self.data.iter_mut().zip(&x.data).for_each(|(y, x)| *y += a * x);
    }

    /// Copies the listed groups into a new vector over `sub`.
    pub fn gather(&self, indices: &[usize], sub: &Arc<Layout>) -> ParamVector {
        let mut data = Vec::with_capacity(sub.len());
        for &i in indices {
            data.extend_from_slice(self.group(i));
        }
        ParamVector { layout: sub.clone(), data }
    }

    /// Inverse of [`gather`](Self::gather).
    pub fn scatter(&mut self, indices: &[usize], part: &ParamVector) {
        let mut cursor = 0;
        for &i in indices {
            let dst = self.group_mut(i);
            let n = dst.len();
            dst.copy_from_slice(&part.data[cursor..cursor + n]);
            cursor += n;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gather_scatter_roundtrip() {
        let layout = Arc::new(
            Layout::new([
                ("W", Shape::Matrix { rows: 2, cols: 3 }),
                ("b", Shape::Vector { len: 2 }),
                ("u", Shape::Vector { len: 2 }),
            ])
            .unwrap(),
        );
        let p = ParamVector::from_vec(layout.clone(), (0..10).map(f64::from).collect()).unwrap();
        let idx = [2, 0];
        let sub = Arc::new(layout.subset(&idx).unwrap());
        let part = p.gather(&idx, &sub);
        assert_eq!(part.as_slice(), &[8.0, 9.0, 0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        let mut q = ParamVector::zeros(layout);
        q.scatter(&idx, &part);
        assert_eq!(q.group(0), p.group(0));
        assert_eq!(q.group(1), &[0.0, 0.0]);
        assert_eq!(q.group(2), p.group(2));
    }

    #[test]
    fn layout_validation() {
        assert!(Layout::new([("a", Shape::Vector { len: 0 })]).is_err());
        assert!(Layout::new([("a", Shape::Vector { len: 1 }), ("a", Shape::Vector { len: 1 })]).is_err());
        assert!(Layout::new(Vec::<(String, Shape)>::new()).is_err());
        let l = Layout::flat(3).unwrap();
        assert!(ParamVector::from_vec(Arc::new(l), vec![1.0]).is_err());
    }
}
