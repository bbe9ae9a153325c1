use std::ops::Range;
use std::sync::Arc;

use super::ObjectiveError;

/// Names and lengths of the parameter groups, fixed at construction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupLayout {
    names: Vec<String>,
    offsets: Vec<usize>,
}

impl GroupLayout {
    pub fn new<S: Into<String>>(groups: impl IntoIterator<Item = (S, usize)>) -> Result<Self, ObjectiveError> {
        let mut names = Vec::new();
        let mut offsets = vec![0];
        for (name, len) in groups {
            let name = name.into();
            if name.is_empty() || name.contains(char::is_whitespace) || name.contains(':') {
                return Err(ObjectiveError::Config(format!("invalid parameter group name `{name}`")));
            }
            if names.contains(&name) {
                return Err(ObjectiveError::Config(format!("duplicate parameter group `{name}`")));
            }
            names.push(name);
            offsets.push(offsets.last().unwrap() + len);
        }
        if names.is_empty() {
            return Err(ObjectiveError::Config("at least one parameter group is required".into()));
        }
        Ok(Self { names, offsets })
    }

    /// Splits `dim` coordinates into contiguous groups as evenly as possible.
    pub fn even(names: &[String], dim: usize) -> Result<Self, ObjectiveError> {
        let g = names.len().max(1);
        Self::new(names.iter().enumerate().map(|(i, n)| (n.clone(), dim * (i + 1) / g - dim * i / g)))
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn num_groups(&self) -> usize {
        self.names.len()
    }

    pub fn total_dim(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn range(&self, group: usize) -> Range<usize> {
        self.offsets[group]..self.offsets[group + 1]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Group owning flat coordinate `i`.
    pub fn group_of(&self, i: usize) -> usize {
        self.offsets.partition_point(|&o| o <= i) - 1
    }
}

/// Model state: one flat buffer viewed through a [`GroupLayout`].
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGroupSet {
    layout: Arc<GroupLayout>,
    data: Vec<f64>,
}

impl ParamGroupSet {
    pub fn new(layout: Arc<GroupLayout>, data: Vec<f64>) -> Result<Self, ObjectiveError> {
        if data.len() != layout.total_dim() {
            return Err(ObjectiveError::Shape { expected: layout.total_dim(), found: data.len() });
        }
        Ok(Self { layout, data })
    }

    pub fn zeros(layout: Arc<GroupLayout>) -> Self {
        let data = vec![0.0; layout.total_dim()];
        Self { layout, data }
    }

    pub fn layout(&self) -> &Arc<GroupLayout> {
        &self.layout
    }

    pub fn total_dim(&self) -> usize {
        self.data.len()
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

    pub fn group(&self, name: &str) -> Option<&[f64]> {
        self.layout.index_of(name).map(|g| self.group_at(g))
    }

    pub fn group_at(&self, g: usize) -> &[f64] {
        &self.data[self.layout.range(g)]
    }

    pub fn group_at_mut(&mut self, g: usize) -> &mut [f64] {
        let r = self.layout.range(g);
        &mut self.data[r]
    }

    pub fn groups(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.layout.names().iter().enumerate().map(|(g, n)| (n.as_str(), self.group_at(g)))
    }

    /// Euclidean norm over every group.
    pub fn global_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Fails with the first group holding a NaN or infinity.
    pub fn check_finite(&self) -> Result<(), ObjectiveError> {
        match self.data.iter().position(|x| !x.is_finite()) {
            None => Ok(()),
            Some(i) => Err(ObjectiveError::NonFinite { group: self.layout.names[self.layout.group_of(i)].clone() }),
        }
    }

    pub fn same_layout(&self, other: &ParamGroupSet) -> bool {
        Arc::ptr_eq(&self.layout, &other.layout) || self.layout == other.layout
    }
}
