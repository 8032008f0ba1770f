//! Flat parameter storage shared by the network models.
//!
//! All weights of a model live in one `Vec<f64>`; a layout maps tensor
//! names to sub-ranges. The optimizer and the gradient checker treat the
//! parameters as a flat array, while forward passes view named slices.

use std::ops::Range;

#[derive(Debug, Clone, PartialEq)]
pub struct LayoutEntry {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl LayoutEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Named-tensor layout over a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamLayout {
    entries: Vec<LayoutEntry>,
    total: usize,
}

impl ParamLayout {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a tensor and returns its flat range.
    pub fn push(&mut self, name: impl Into<String>, shape: &[usize]) -> Range<usize> {
        let len: usize = shape.iter().product();
        let entry = LayoutEntry {
            name: name.into(),
            offset: self.total,
            shape: shape.to_vec(),
        };
        let range = entry.range();
        self.total += len;
        self.entries.push(entry);
        range
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn entries(&self) -> &[LayoutEntry] {
        &self.entries
    }

    pub fn range_of(&self, name: &str) -> Option<Range<usize>> {
        self.entries.iter().find(|e| e.name == name).map(|e| e.range())
    }

    /// Name of the tensor owning a flat index.
    pub fn tensor_of(&self, index: usize) -> &str {
        self.entries
            .iter()
            .find(|e| e.range().contains(&index))
            .map(|e| e.name.as_str())
            .unwrap_or("?")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_assigns_contiguous_ranges() {
        let mut l = ParamLayout::new();
        let a = l.push("w", &[3, 2]);
        let b = l.push("b", &[3]);
        assert_eq!(a, 0..6);
        assert_eq!(b, 6..9);
        assert_eq!(l.total(), 9);
        assert_eq!(l.range_of("b"), Some(6..9));
        assert_eq!(l.tensor_of(7), "b");
        assert_eq!(l.tensor_of(0), "w");
    }
}
