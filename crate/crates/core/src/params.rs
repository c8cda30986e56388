use std::collections::HashSet;

use crate::error::{invalid, Result};

/// Named parameter vector with an optional split into tested (θ₁) and
/// nuisance (θ₂) parts.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVec {
    values: Vec<f64>,
    names: Vec<String>,
    tested: Vec<usize>,
}

impl ParamVec {
    pub fn new(values: Vec<f64>, names: Vec<String>) -> Result<Self> {
        if values.len() != names.len() {
            return invalid(format!("{} values but {} names", values.len(), names.len()));
        }
        let mut seen = HashSet::new();
        for n in &names {
            if !seen.insert(n.as_str()) {
                return invalid(format!("duplicate parameter name `{n}`"));
            }
        }
        Ok(Self { values, names, tested: Vec::new() })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.values.len() {
            return invalid(format!("expected {} values, got {}", self.values.len(), values.len()));
        }
        Ok(Self { values, names: self.names.clone(), tested: self.tested.clone() })
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.index_of(name).map(|i| self.values[i])
    }

    /// Marks the named parameters as θ₁. Order follows the given names.
    pub fn with_partition<S: AsRef<str>>(mut self, tested: &[S]) -> Result<Self> {
        let mut idx = Vec::with_capacity(tested.len());
        for name in tested {
            let name = name.as_ref();
            match self.index_of(name) {
                Some(i) if idx.contains(&i) => return invalid(format!("parameter `{name}` listed twice")),
                Some(i) => idx.push(i),
                None => return invalid(format!("unknown parameter `{name}`")),
            }
        }
        self.tested = idx;
        Ok(self)
    }

    pub fn with_partition_indices(mut self, tested: Vec<usize>) -> Result<Self> {
        if let Some(&bad) = tested.iter().find(|&&i| i >= self.values.len()) {
            return invalid(format!("partition index {bad} out of range"));
        }
        let unique: HashSet<_> = tested.iter().collect();
        if unique.len() != tested.len() {
            return invalid("partition indices repeat");
        }
        self.tested = tested;
        Ok(self)
    }

    /// Indices of θ₁.
    pub fn tested(&self) -> &[usize] {
        &self.tested
    }

    /// Indices of θ₂, in natural order.
    pub fn nuisance(&self) -> Vec<usize> {
        (0..self.values.len()).filter(|i| !self.tested.contains(i)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn partition_by_name() {
        let p = ParamVec::new(vec![1.0, 2.0, 3.0], names(&["a", "b", "c"]))
            .unwrap()
            .with_partition(&["c", "a"])
            .unwrap();
        assert_eq!(p.tested(), &[2, 0]);
        assert_eq!(p.nuisance(), vec![1]);
        assert!(p.clone().with_partition(&["z"]).is_err());
    }

    #[test]
    fn duplicate_names_rejected() {
        assert!(ParamVec::new(vec![1.0, 2.0], names(&["a", "a"])).is_err());
    }
}
